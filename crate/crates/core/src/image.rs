//! Planar floating-point raster used throughout the pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// An `H×W×C` image with values nominally in `[0, 1]`, stored plane by plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_planar(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == channels * height * width,
            "planar buffer has {} values, expected {}x{}x{}",
            data.len(),
            channels,
            height,
            width
        );
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds an image by evaluating `f(channel, row, col)` at every pixel.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Replicates a single-channel image into three identical planes.
    pub fn to_rgb(&self) -> Result<Image> {
        match self.channels {
            3 => Ok(self.clone()),
            1 => {
                let mut data = Vec::with_capacity(self.data.len() * 3);
                for _ in 0..3 {
                    data.extend_from_slice(&self.data);
                }
                Image::from_planar(3, self.height, self.width, data)
            }
            n => Err(Error::Contract(format!("cannot convert {n}-channel image to RGB"))),
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Copies the rectangle `[top, top+h) × [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        ensure!(
            top + h <= self.height && left + w <= self.width && h > 0 && w > 0,
            "crop {h}x{w}+{top}+{left} outside {}x{}",
            self.height,
            self.width
        );
        Ok(Image::from_fn(self.channels, h, w, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    /// Writes `src` into this image with its top-left corner at `(top, left)`.
    pub fn paste(&mut self, src: &Image, top: usize, left: usize) -> Result<()> {
        ensure!(
            src.channels == self.channels
                && top + src.height <= self.height
                && left + src.width <= self.width,
            "paste target out of bounds"
        );
        for c in 0..src.channels {
            for y in 0..src.height {
                for x in 0..src.width {
                    self.set(c, top + y, left + x, src.get(c, y, x));
                }
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Decodes a PNG/PPM file into `[0,1]` floats. Gray files stay single-channel,
    /// anything with color is converted to RGB (alpha dropped).
    pub fn load(path: &Path) -> Result<Image> {
        let img = ::image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let color = img.color();
        if color.channel_count() <= 2 && !color.has_color() {
            let g = img.to_luma32f();
            let (w, h) = g.dimensions();
            Image::from_planar(1, h as usize, w as usize, g.into_raw())
        } else {
            let rgb = img.to_rgb32f();
            let (w, h) = rgb.dimensions();
            let (w, h) = (w as usize, h as usize);
            let raw = rgb.into_raw();
            Ok(Image::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c]))
        }
    }

    /// Writes an 8-bit PNG (gray or RGB) after clamping to `[0,1]`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let res = match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| q(v)).collect();
                ::image::GrayImage::from_raw(w, h, buf)
                    .expect("buffer size")
                    .save(path)
            }
            3 => {
                let mut buf = Vec::with_capacity(self.data.len());
                for y in 0..self.height {
                    for x in 0..self.width {
                        for c in 0..3 {
                            buf.push(q(self.get(c, y, x)));
                        }
                    }
                }
                ::image::RgbImage::from_raw(w, h, buf)
                    .expect("buffer size")
                    .save(path)
            }
            n => return Err(Error::Contract(format!("cannot save {n}-channel image"))),
        };
        res.map_err(|e| match e {
            ::image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_preserves_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(3, 4, 5, |c, y, x| ((c * 20 + y * 5 + x) as f32) / 255.0);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = Image::load(&p).unwrap();
        assert_eq!(back.channels(), 3);
        assert!(img.max_abs_diff(&back) < 1e-6);
    }

    #[test]
    fn gray_to_rgb_replicates() {
        let g = Image::from_fn(1, 2, 2, |_, y, x| (y * 2 + x) as f32 / 4.0);
        let rgb = g.to_rgb().unwrap();
        assert_eq!(rgb.plane(0), rgb.plane(2));
        assert_eq!(rgb.plane(1), g.plane(0));
    }

    #[test]
    fn crop_out_of_bounds_is_rejected() {
        let img = Image::zeros(1, 4, 4);
        assert!(img.crop(2, 2, 3, 1).is_err());
        assert_eq!(img.crop(1, 1, 2, 2).unwrap().height(), 2);
    }
}
