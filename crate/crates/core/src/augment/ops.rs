//! Deterministic image operations. Randomness lives in the parameter
//! sampling (see the parent module); everything here is a pure function.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::Image;

/// ITU-R 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Rotates counter-clockwise by `k` quarter turns on the pixel grid.
pub fn rotate90(x: &Image, k: usize) -> Result<Image> {
    ensure!(x.is_square(), "rotate90 needs a square image, got {}x{}", x.height(), x.width());
    let n = x.height();
    Ok(match k % 4 {
        0 => x.clone(),
        1 => Image::from_fn(x.channels(), n, n, |c, i, j| x.get(c, j, n - 1 - i)),
        2 => Image::from_fn(x.channels(), n, n, |c, i, j| x.get(c, n - 1 - i, n - 1 - j)),
        _ => Image::from_fn(x.channels(), n, n, |c, i, j| x.get(c, n - 1 - j, i)),
    })
}

pub fn hflip(x: &Image) -> Image {
    let w = x.width();
    Image::from_fn(x.channels(), x.height(), w, |c, i, j| x.get(c, i, w - 1 - j))
}

/// Bilinear lookup at fractional coordinates; `None` outside the image.
fn bilinear(x: &Image, c: usize, fy: f64, fx: f64) -> Option<f64> {
    let (h, w) = (x.height() as f64, x.width() as f64);
    if fy < -0.5 || fx < -0.5 || fy > h - 0.5 || fx > w - 0.5 {
        return None;
    }
    let fy = fy.clamp(0.0, h - 1.0);
    let fx = fx.clamp(0.0, w - 1.0);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(x.height() - 1), (x0 + 1).min(x.width() - 1));
    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
    let top = x.get(c, y0, x0) as f64 * (1.0 - tx) + x.get(c, y0, x1) as f64 * tx;
    let bottom = x.get(c, y1, x0) as f64 * (1.0 - tx) + x.get(c, y1, x1) as f64 * tx;
    Some(top * (1.0 - ty) + bottom * ty)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Cuts `region` and resamples it bilinearly to `out_h × out_w`.
pub fn resized_crop(x: &Image, region: &CropBox, out_h: usize, out_w: usize) -> Result<Image> {
    ensure!(
        region.height > 0
            && region.width > 0
            && region.top + region.height <= x.height()
            && region.left + region.width <= x.width(),
        "crop box {region:?} outside {}x{}",
        x.height(),
        x.width()
    );
    let sy = region.height as f64 / out_h as f64;
    let sx = region.width as f64 / out_w as f64;
    Ok(Image::from_fn(x.channels(), out_h, out_w, |c, i, j| {
        let fy = region.top as f64 + (i as f64 + 0.5) * sy - 0.5;
        let fx = region.left as f64 + (j as f64 + 0.5) * sx - 0.5;
        let fy = fy.clamp(region.top as f64, (region.top + region.height - 1) as f64);
        let fx = fx.clamp(region.left as f64, (region.left + region.width - 1) as f64);
        bilinear(x, c, fy, fx).unwrap_or(0.0) as f32
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    /// Rotation in degrees, counter-clockwise.
    pub angle: f64,
    /// Translation in pixels (x to the right, y down).
    pub translate: (f64, f64),
    pub scale: f64,
    /// Horizontal shear in degrees.
    pub shear: f64,
}

/// Affine warp about the image center, bilinear, zero fill.
pub fn affine(x: &Image, p: &AffineParams) -> Image {
    let (h, w) = (x.height(), x.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sa, ca) = p.angle.to_radians().sin_cos();
    let sh = p.shear.to_radians().tan();
    // forward: M = s · R(angle) · Shear; apply inverse to output coordinates
    let (m00, m01, m10, m11) = (p.scale * ca, p.scale * (ca * sh - sa), p.scale * sa, p.scale * (sa * sh + ca));
    let det = m00 * m11 - m01 * m10;
    let (i00, i01, i10, i11) = (m11 / det, -m01 / det, -m10 / det, m00 / det);
    Image::from_fn(x.channels(), h, w, |c, i, j| {
        let dx = j as f64 - cx - p.translate.0;
        let dy = cy - i as f64 + p.translate.1;
        let sx = i00 * dx + i01 * dy;
        let sy = i10 * dx + i11 * dy;
        bilinear(x, c, cy - sy, cx + sx).unwrap_or(0.0) as f32
    })
}

/// Luma of each pixel of an RGB image (or the single plane of a gray one).
fn luma(x: &Image) -> Vec<f64> {
    let n = x.height() * x.width();
    if x.channels() < 3 {
        return x.plane(0).iter().map(|&v| v as f64).collect();
    }
    (0..n)
        .map(|i| {
            LUMA[0] * x.plane(0)[i] as f64
                + LUMA[1] * x.plane(1)[i] as f64
                + LUMA[2] * x.plane(2)[i] as f64
        })
        .collect()
}

/// Replaces every plane with the luma image.
pub fn grayscale(x: &Image) -> Image {
    let y = luma(x);
    let n = y.len();
    Image::from_fn(x.channels(), x.height(), x.width(), |_, i, j| {
        y[(i * x.width() + j) % n] as f32
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue shift as a fraction of a full turn.
    pub hue: f64,
    pub order: [JitterOp; 4],
}

fn blend(x: &mut Image, other: impl Fn(usize, usize) -> f64, factor: f64) {
    let n = x.height() * x.width();
    for c in 0..x.channels() {
        let plane = x.plane_mut(c);
        for i in 0..n {
            let o = other(c, i);
            plane[i] = (o + factor * (plane[i] as f64 - o)).clamp(0.0, 1.0) as f32;
        }
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn shift_hue(x: &mut Image, shift: f64) {
    if x.channels() < 3 || shift == 0.0 {
        return;
    }
    let n = x.height() * x.width();
    for i in 0..n {
        let (r, g, b) = (x.plane(0)[i] as f64, x.plane(1)[i] as f64, x.plane(2)[i] as f64);
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb(h + shift, s, v);
        x.plane_mut(0)[i] = r as f32;
        x.plane_mut(1)[i] = g as f32;
        x.plane_mut(2)[i] = b as f32;
    }
}

pub fn color_jitter(x: &Image, p: &JitterParams) -> Image {
    let mut out = x.clone();
    for op in p.order {
        match op {
            JitterOp::Brightness => blend(&mut out, |_, _| 0.0, p.brightness),
            JitterOp::Contrast => {
                let y = luma(&out);
                let mean = y.iter().sum::<f64>() / y.len() as f64;
                blend(&mut out, |_, _| mean, p.contrast);
            }
            JitterOp::Saturation => {
                let y = luma(&out);
                blend(&mut out, |_, i| y[i], p.saturation);
            }
            JitterOp::Hue => shift_hue(&mut out, p.hue),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurParams {
    pub sigma: f64,
    /// Odd kernel width.
    pub kernel: usize,
}

fn gaussian_taps(sigma: f64, kernel: usize) -> Vec<f64> {
    let r = (kernel / 2) as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= s;
    }
    taps
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(x: &Image, p: &BlurParams) -> Image {
    let taps = gaussian_taps(p.sigma, p.kernel.max(1) | 1);
    let r = (taps.len() / 2) as isize;
    let (h, w) = (x.height(), x.width());
    let mut out = x.clone();
    let mut tmp = vec![0.0f64; h * w];
    for c in 0..x.channels() {
        let src = x.plane(c);
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    acc += t * src[y * w + reflect(xx as isize + k as isize - r, w)] as f64;
                }
                tmp[y * w + xx] = acc;
            }
        }
        let dst = out.plane_mut(c);
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    acc += t * tmp[reflect(y as isize + k as isize - r, h) * w + xx];
                }
                dst[y * w + xx] = acc as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(c: usize, n: usize) -> Image {
        Image::from_fn(c, n, n, |c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f32 / 17.0)
    }

    #[test]
    fn rotations_compose() {
        let x = sample(3, 6);
        assert_eq!(rotate90(&x, 0).unwrap(), x);
        let mut y = x.clone();
        for _ in 0..4 {
            y = rotate90(&y, 1).unwrap();
        }
        assert_eq!(y, x);
        assert_eq!(rotate90(&rotate90(&x, 1).unwrap(), 3).unwrap(), x);
        assert_eq!(rotate90(&rotate90(&x, 1).unwrap(), 1).unwrap(), rotate90(&x, 2).unwrap());
        assert!(rotate90(&Image::zeros(1, 2, 3), 1).is_err());
    }

    #[test]
    fn rotate_moves_top_row_to_left_column() {
        let x = Image::from_fn(1, 3, 3, |_, y, _| if y == 0 { 1.0 } else { 0.0 });
        let r = rotate90(&x, 1).unwrap();
        for i in 0..3 {
            assert_eq!(r.get(0, i, 0), 1.0);
        }
    }

    #[test]
    fn double_hflip_is_identity() {
        let x = sample(3, 5);
        assert_eq!(hflip(&hflip(&x)), x);
        assert_eq!(hflip(&x).get(1, 2, 0), x.get(1, 2, 4));
    }

    #[test]
    fn grayscale_is_idempotent_on_gray() {
        let g = grayscale(&sample(3, 8));
        let gg = grayscale(&g);
        assert!(g.max_abs_diff(&gg) < 1e-6);
    }

    #[test]
    fn tiny_sigma_blur_is_identity() {
        let x = sample(3, 9);
        let y = gaussian_blur(&x, &BlurParams { sigma: 1e-3, kernel: 5 });
        assert!(x.max_abs_diff(&y) < 1e-6);
    }

    #[test]
    fn blur_preserves_constants() {
        let x = Image::filled(1, 7, 7, 0.3);
        let y = gaussian_blur(&x, &BlurParams { sigma: 1.5, kernel: 7 });
        assert!(x.max_abs_diff(&y) < 1e-6);
    }

    #[test]
    fn neutral_jitter_is_identity() {
        let x = sample(3, 6);
        let p = JitterParams {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.0,
            order: [JitterOp::Hue, JitterOp::Brightness, JitterOp::Saturation, JitterOp::Contrast],
        };
        assert!(color_jitter(&x, &p).max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.1, 0.5, 0.9), (0.9, 0.2, 0.2), (0.3, 0.3, 0.3), (0.0, 1.0, 0.5)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_affine_and_full_crop() {
        let x = sample(1, 8);
        let p = AffineParams {
            angle: 0.0,
            translate: (0.0, 0.0),
            scale: 1.0,
            shear: 0.0,
        };
        assert!(affine(&x, &p).max_abs_diff(&x) < 1e-6);
        let full = CropBox {
            top: 0,
            left: 0,
            height: 8,
            width: 8,
        };
        assert!(resized_crop(&x, &full, 8, 8).unwrap().max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn affine_quarter_turn_matches_grid_rotation_inside() {
        let x = sample(1, 9);
        let p = AffineParams {
            angle: 90.0,
            translate: (0.0, 0.0),
            scale: 1.0,
            shear: 0.0,
        };
        let a = affine(&x, &p);
        let r = rotate90(&x, 1).unwrap();
        assert!(a.max_abs_diff(&r) < 1e-5);
    }
}
