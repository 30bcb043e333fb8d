//! Deterministic synthetic image sets for tests and desk-scale runs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::InMemoryDataset;
use crate::error::{ensure, Error, Result};
use crate::fft::Fft2d;
use crate::image::Image;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Gratings at 0°, 45°, 90° or 135°; the class is the orientation. A
    /// top-to-bottom illumination falloff makes quarter turns distinguishable.
    OrientedTextures,
    /// A red-dominant or a blue-dominant blob on a gray background.
    TwoBlobSeparable,
    /// Unlabeled color noise with a `1/f` amplitude spectrum.
    Noise,
}

impl SynthKind {
    pub fn class_names(&self) -> Vec<String> {
        match self {
            SynthKind::OrientedTextures => ["deg000", "deg045", "deg090", "deg135"].map(String::from).to_vec(),
            SynthKind::TwoBlobSeparable => vec!["red".into(), "blue".into()],
            SynthKind::Noise => Vec::new(),
        }
    }

    fn id(&self) -> u64 {
        match self {
            SynthKind::OrientedTextures => 1,
            SynthKind::TwoBlobSeparable => 2,
            SynthKind::Noise => 3,
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oriented-textures" => Ok(SynthKind::OrientedTextures),
            "two-blob-separable" => Ok(SynthKind::TwoBlobSeparable),
            "noise" => Ok(SynthKind::Noise),
            other => Err(Error::Config(format!(
                "unknown synthetic dataset `{other}` (oriented-textures, two-blob-separable, noise)"
            ))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::OrientedTextures => "oriented-textures",
            SynthKind::TwoBlobSeparable => "two-blob-separable",
            SynthKind::Noise => "noise",
        })
    }
}

fn oriented_texture(class: usize, side: usize, rng: &mut impl Rng) -> Image {
    let theta = class as f64 * PI / 4.0;
    let (s, c) = theta.sin_cos();
    let omega = rng.random_range(0.6..1.2);
    let phase = rng.random_range(0.0..2.0 * PI);
    let tint: [f64; 3] = [rng.random_range(0.6..1.0), rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)];
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");
    let denom = (side.max(2) - 1) as f64;
    let mut img = Image::zeros(3, side, side);
    for y in 0..side {
        let light = 0.25 + 0.5 * (1.0 - y as f64 / denom);
        for x in 0..side {
            let wave = (omega * (c * x as f64 + s * y as f64) + phase).cos();
            let base = light * (0.75 + 0.25 * wave);
            for (ch, t) in tint.iter().enumerate() {
                let v = base * t + noise.sample(rng);
                img.set(ch, y, x, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}

fn two_blob(class: usize, side: usize, rng: &mut impl Rng) -> Image {
    let color = if class == 0 { [0.9, 0.2, 0.2] } else { [0.2, 0.2, 0.9] };
    let s = side as f64;
    let (cy, cx) = (rng.random_range(0.3 * s..0.7 * s), rng.random_range(0.3 * s..0.7 * s));
    let radius = rng.random_range(0.15 * s..0.3 * s);
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let mut img = Image::zeros(3, side, side);
    for y in 0..side {
        for x in 0..side {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let w = (-d2 / (2.0 * radius * radius)).exp();
            for (ch, col) in color.iter().enumerate() {
                let v = (1.0 - w) * 0.5 + w * col + noise.sample(rng);
                img.set(ch, y, x, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}

/// A zero-mean, unit-variance field with amplitude spectrum `1/|f|`.
fn pink_field(side: usize, fft: &Fft2d, rng: &mut impl Rng) -> Vec<f64> {
    let gauss = Normal::new(0.0, 1.0).expect("valid sigma");
    let mut spec: Vec<Complex64> = (0..side * side).map(|_| Complex64::new(gauss.sample(rng), 0.0)).collect();
    fft.forward(&mut spec);
    let freq = |k: usize| {
        let k = k as f64;
        if k > side as f64 / 2.0 { k - side as f64 } else { k }
    };
    for r in 0..side {
        for q in 0..side {
            let f = (freq(r).powi(2) + freq(q).powi(2)).sqrt();
            spec[r * side + q] *= if f == 0.0 { 0.0 } else { 1.0 / f };
        }
    }
    fft.inverse(&mut spec);
    let vals: Vec<f64> = spec.iter().map(|z| z.re).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt().max(1e-12);
    vals.iter().map(|v| (v - mean) / std).collect()
}

/// Natural-statistics color noise: a shared luminance field plus weaker
/// per-channel fields.
pub fn pink_noise(side: usize, rng: &mut impl Rng) -> Image {
    let fft = Fft2d::new(side);
    let luma = pink_field(side, &fft, rng);
    let mut img = Image::zeros(3, side, side);
    for ch in 0..3 {
        let own = pink_field(side, &fft, rng);
        for (i, (l, o)) in luma.iter().zip(&own).enumerate() {
            let v = 0.5 + 0.15 * l + 0.05 * o;
            img.plane_mut(ch)[i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    img
}

/// `n` images of side `size`. Labels cycle through the classes, so class
/// counts are exact whenever `n` is a multiple of the class count.
pub fn synth_dataset(kind: SynthKind, n: usize, seed: u64, size: usize) -> Result<InMemoryDataset> {
    ensure!(n > 0, "synthetic dataset needs at least one image");
    ensure!(size >= 4, "synthetic image side {size} is too small");
    let classes = kind.class_names();
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, Stream::Synth, &[kind.id(), i as u64]);
        let label = (!classes.is_empty()).then(|| i % classes.len());
        let img = match kind {
            SynthKind::OrientedTextures => oriented_texture(label.unwrap_or(0), size, &mut rng),
            SynthKind::TwoBlobSeparable => two_blob(label.unwrap_or(0), size, &mut rng),
            SynthKind::Noise => pink_noise(size, &mut rng),
        };
        images.push(img);
        labels.push(label);
    }
    InMemoryDataset::new(images, labels, classes)
}
