//! Separable Lanczos-3 resampling.

use crate::error::{ensure, Result};
use crate::image::Image;

/// Lobes of the windowed sinc.
pub const LANCZOS_A: f64 = 3.0;

pub fn lanczos_kernel(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= LANCZOS_A {
        return 0.0;
    }
    let px = std::f64::consts::PI * x;
    LANCZOS_A * px.sin() * (px / LANCZOS_A).sin() / (px * px)
}

/// Normalized taps for one output sample: `(first source index, weights)`.
/// Source indices past either edge are clamped onto the border pixel.
struct Taps {
    start: isize,
    weights: Vec<f64>,
}

fn plan_axis(src_len: usize, dst_len: usize) -> Vec<Taps> {
    let ratio = src_len as f64 / dst_len as f64;
    // widen the kernel when shrinking so it still low-passes
    let stretch = ratio.max(1.0);
    let support = LANCZOS_A * stretch;
    (0..dst_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let start = (center - support).floor() as isize + 1;
            let end = (center + support).floor() as isize;
            let mut weights: Vec<f64> = (start..=end)
                .map(|s| lanczos_kernel((s as f64 - center) / stretch))
                .collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            Taps { start, weights }
        })
        .collect()
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Resizes every plane to `new_h × new_w`. Output values are clamped to `[0,1]`.
pub fn lanczos_resize(image: &Image, new_h: usize, new_w: usize) -> Result<Image> {
    ensure!(new_h > 0 && new_w > 0, "target size {new_h}x{new_w} has a zero side");
    ensure!(!image.is_empty(), "cannot resize an empty image");
    let (h, w) = (image.height(), image.width());
    if (h, w) == (new_h, new_w) {
        let mut out = image.clone();
        out.clamp01();
        return Ok(out);
    }
    let cols = plan_axis(w, new_w);
    let rows = plan_axis(h, new_h);
    let mut out = Image::zeros(image.channels(), new_h, new_w);
    let mut tmp = vec![0.0f64; h * new_w];
    for c in 0..image.channels() {
        let src = image.plane(c);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (x, taps) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for (k, wt) in taps.weights.iter().enumerate() {
                    acc += wt * row[clamp_index(taps.start + k as isize, w)] as f64;
                }
                tmp[y * new_w + x] = acc;
            }
        }
        let dst = out.plane_mut(c);
        for (y, taps) in rows.iter().enumerate() {
            for x in 0..new_w {
                let mut acc = 0.0;
                for (k, wt) in taps.weights.iter().enumerate() {
                    acc += wt * tmp[clamp_index(taps.start + k as isize, h) * new_w + x];
                }
                dst[y * new_w + x] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_basics() {
        assert_eq!(lanczos_kernel(0.0), 1.0);
        for k in 1..3 {
            assert!(lanczos_kernel(k as f64).abs() < 1e-15);
        }
        assert_eq!(lanczos_kernel(3.5), 0.0);
        assert!((lanczos_kernel(0.5) - lanczos_kernel(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_target_is_rejected() {
        assert!(lanczos_resize(&Image::zeros(1, 4, 4), 0, 4).is_err());
    }

    #[test]
    fn downsample_constant_and_shape() {
        let img = Image::filled(3, 96, 96, 0.25);
        let out = lanczos_resize(&img, 32, 32).unwrap();
        assert_eq!((out.channels(), out.height(), out.width()), (3, 32, 32));
        assert!(out.data().iter().all(|v| (v - 0.25).abs() < 1e-6));
    }
}
