//! Windowed 2D scattering transform, orders 0–2.
//!
//! The cascade follows the usual critically sampled schedule: after each
//! band-pass at scale `j` the modulus is computed on a grid subsampled by `2^j`,
//! and every output is low-passed by `φ_J` and subsampled to `size / 2^J`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::lanczos::lanczos_resize;
use crate::error::{ensure, Error, Result};
use crate::fft::subsample_spectrum;
use crate::filterbank::FilterBank;
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadPolicy {
    /// Lanczos-resize the image to the bank's grid.
    #[default]
    ResizeToPow2,
    /// Center the image on a zero grid of the bank's size.
    ZeroPadToPow2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterConfig {
    pub scales: usize,
    pub orientations: usize,
    /// Maximum scattering order, 1 or 2.
    pub order: usize,
    #[serde(default)]
    pub pad_policy: PadPolicy,
}

impl ScatterConfig {
    pub fn new(scales: usize, orientations: usize) -> Self {
        Self {
            scales,
            orientations,
            order: 2,
            pad_policy: PadPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.order) {
            return Err(Error::Config(format!(
                "scattering order must be 1 or 2, got {}",
                self.order
            )));
        }
        Ok(())
    }

    pub fn channels_per_plane(&self) -> usize {
        channel_count(self.scales, self.orientations, self.order)
    }
}

/// `1 + J·L + L²·J(J−1)/2` for order 2, `1 + J·L` for order 1.
pub fn channel_count(scales: usize, orientations: usize, order: usize) -> usize {
    let first = scales * orientations;
    let second = if order >= 2 {
        orientations * orientations * scales * (scales.saturating_sub(1)) / 2
    } else {
        0
    };
    1 + first + second
}

/// Indices of one scattering path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScatPath {
    Zeroth,
    First { j1: usize, theta1: usize },
    Second { j1: usize, theta1: usize, j2: usize, theta2: usize },
}

impl ScatPath {
    pub fn order(&self) -> usize {
        match self {
            ScatPath::Zeroth => 0,
            ScatPath::First { .. } => 1,
            ScatPath::Second { .. } => 2,
        }
    }
}

impl std::fmt::Display for ScatPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScatPath::Zeroth => write!(f, "0 - - - -"),
            ScatPath::First { j1, theta1 } => write!(f, "1 {j1} {theta1} - -"),
            ScatPath::Second {
                j1,
                theta1,
                j2,
                theta2,
            } => write!(f, "2 {j1} {theta1} {j2} {theta2}"),
        }
    }
}

/// Channel descriptor: which color plane and which path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathDescriptor {
    pub plane: usize,
    pub path: ScatPath,
}

/// All paths of one plane in output order.
pub fn enumerate_paths(scales: usize, orientations: usize, order: usize) -> Vec<ScatPath> {
    let mut paths = vec![ScatPath::Zeroth];
    for j1 in 0..scales {
        for theta1 in 0..orientations {
            paths.push(ScatPath::First { j1, theta1 });
        }
    }
    if order >= 2 {
        for j1 in 0..scales {
            for theta1 in 0..orientations {
                for j2 in (j1 + 1)..scales {
                    for theta2 in 0..orientations {
                        paths.push(ScatPath::Second {
                            j1,
                            theta1,
                            j2,
                            theta2,
                        });
                    }
                }
            }
        }
    }
    paths
}

/// Stacked scattering maps, shape `(channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringCoeffs {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    paths: Vec<PathDescriptor>,
}

impl ScatteringCoeffs {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn paths(&self) -> &[PathDescriptor] {
        &self.paths
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn l2_distance(&self, other: &ScatteringCoeffs) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Spatial mean of each channel over a `grid×grid` partition of the map,
    /// laid out channel-major: `[c0 cell0, c0 cell1, ..., c1 cell0, ...]`.
    pub fn pooled(&self, grid: usize) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let grid = grid.max(1).min(h.min(w));
        let mut out = Vec::with_capacity(self.channels * grid * grid);
        for c in 0..self.channels {
            let map = self.channel(c);
            for gy in 0..grid {
                let (y0, y1) = (gy * h / grid, (gy + 1) * h / grid);
                for gx in 0..grid {
                    let (x0, x1) = (gx * w / grid, (gx + 1) * w / grid);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += map[y * w + x];
                        }
                    }
                    out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        out
    }

    fn stack(blocks: Vec<ScatteringCoeffs>) -> ScatteringCoeffs {
        let (height, width) = (blocks[0].height, blocks[0].width);
        let mut data = Vec::new();
        let mut paths = Vec::new();
        let mut channels = 0;
        for (plane, b) in blocks.into_iter().enumerate() {
            channels += b.channels;
            data.extend(b.data);
            paths.extend(b.paths.into_iter().map(|p| PathDescriptor { plane, ..p }));
        }
        ScatteringCoeffs {
            channels,
            height,
            width,
            data,
            paths,
        }
    }
}

fn product(spec: &[Complex64], filter: &[f64]) -> Vec<Complex64> {
    spec.iter().zip(filter).map(|(s, &f)| s * f).collect()
}

/// Modulus in space, returned as a spectrum on the same grid.
fn modulus_spectrum(bank: &FilterBank, mut spec: Vec<Complex64>, res: usize) -> Vec<Complex64> {
    let fft = bank.fft(res);
    fft.inverse(&mut spec);
    for v in spec.iter_mut() {
        *v = Complex64::new(v.norm(), 0.0);
    }
    fft.forward(&mut spec);
    spec
}

/// Low-pass by `φ_J` then subsample from resolution `res` down to `J`.
fn lowpass_output(bank: &FilterBank, spec: &[Complex64], res: usize) -> Vec<f64> {
    let j = bank.config().scales;
    let filtered = product(spec, bank.phi(res));
    let mut out = subsample_spectrum(&filtered, bank.size_at(res), 1 << (j - res));
    bank.fft(j).inverse(&mut out);
    out.into_iter().map(|c| c.re).collect()
}

/// Scattering coefficients of one real `size×size` plane (row-major).
pub fn scatter(plane: &[f64], bank: &FilterBank, cfg: &ScatterConfig) -> Result<ScatteringCoeffs> {
    cfg.validate()?;
    let bc = bank.config();
    ensure!(
        bc.scales == cfg.scales && bc.orientations == cfg.orientations,
        "bank (J={}, L={}) does not match scatter config (J={}, L={})",
        bc.scales,
        bc.orientations,
        cfg.scales,
        cfg.orientations
    );
    let n = bank.size();
    ensure!(
        plane.len() == n * n,
        "plane has {} pixels, bank expects {n}x{n}",
        plane.len()
    );
    let (big_j, l) = (bc.scales, bc.orientations);
    let out_side = bank.size_at(big_j);

    let x_hat = bank.fft(0).forward_real(plane);
    let mut zeroth = lowpass_output(bank, &x_hat, 0);
    let mut first = Vec::with_capacity(big_j * l * out_side * out_side);
    let mut second = Vec::new();

    for j1 in 0..big_j {
        for t1 in 0..l {
            let band = product(&x_hat, bank.psi(j1, t1).at(0));
            let band = subsample_spectrum(&band, n, 1 << j1);
            let u1 = modulus_spectrum(bank, band, j1);
            first.extend(lowpass_output(bank, &u1, j1));
            if cfg.order < 2 {
                continue;
            }
            for j2 in (j1 + 1)..big_j {
                for t2 in 0..l {
                    let band = product(&u1, bank.psi(j2, t2).at(j1));
                    let band = subsample_spectrum(&band, bank.size_at(j1), 1 << (j2 - j1));
                    let u2 = modulus_spectrum(bank, band, j2);
                    second.extend(lowpass_output(bank, &u2, j2));
                }
            }
        }
    }

    zeroth.extend(first);
    zeroth.extend(second);
    let paths: Vec<PathDescriptor> = enumerate_paths(big_j, l, cfg.order)
        .into_iter()
        .map(|path| PathDescriptor { plane: 0, path })
        .collect();
    debug_assert_eq!(zeroth.len(), paths.len() * out_side * out_side);
    Ok(ScatteringCoeffs {
        channels: paths.len(),
        height: out_side,
        width: out_side,
        data: zeroth,
        paths,
    })
}

/// Brings an image onto the bank's square grid according to `policy`.
///
/// The grid must be the smallest power of two covering the image, so that 96×96
/// goes to 128 and 32×32 stays at 32.
pub fn fit_to_grid(image: &Image, size: usize, policy: PadPolicy) -> Result<Image> {
    let side = image.height().max(image.width());
    ensure!(!image.is_empty(), "empty image");
    ensure!(
        side.next_power_of_two() == size,
        "{}x{} image does not fit a {size}x{size} grid",
        image.height(),
        image.width()
    );
    if image.height() == size && image.width() == size {
        return Ok(image.clone());
    }
    match policy {
        PadPolicy::ResizeToPow2 => lanczos_resize(image, size, size),
        PadPolicy::ZeroPadToPow2 => {
            let mut out = Image::zeros(image.channels(), size, size);
            out.paste(
                image,
                (size - image.height()) / 2,
                (size - image.width()) / 2,
            )?;
            Ok(out)
        }
    }
}

/// Scatters each of the three color planes independently and stacks them R, G, B.
pub fn scatter_color(image: &Image, bank: &FilterBank, cfg: &ScatterConfig) -> Result<ScatteringCoeffs> {
    ensure!(
        image.channels() == 3,
        "expected 3 color planes, got {}",
        image.channels()
    );
    let fitted = fit_to_grid(image, bank.size(), cfg.pad_policy)?;
    let blocks = (0..3)
        .map(|c| {
            let plane: Vec<f64> = fitted.plane(c).iter().map(|&v| v as f64).collect();
            scatter(&plane, bank, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScatteringCoeffs::stack(blocks))
}

/// [`scatter_color`] over a batch; output order and values do not depend on
/// the number of worker threads.
pub fn scatter_batch(images: &[Image], bank: &FilterBank, cfg: &ScatterConfig) -> Result<Vec<ScatteringCoeffs>> {
    if let Some(first) = images.first() {
        ensure!(
            images
                .iter()
                .all(|im| im.height() == first.height() && im.width() == first.width()),
            "batch mixes image sizes"
        );
    }
    images
        .par_iter()
        .map(|im| scatter_color(im, bank, cfg))
        .collect()
}

/// Like [`scatter_batch`] but on a dedicated pool of `workers` threads.
pub fn scatter_batch_with_workers(
    images: &[Image],
    bank: &FilterBank,
    cfg: &ScatterConfig,
    workers: usize,
) -> Result<Vec<ScatteringCoeffs>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| scatter_batch(images, bank, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::FilterBankConfig;

    fn setup(j: usize, l: usize, n: usize) -> (FilterBank, ScatterConfig) {
        (
            FilterBank::build(FilterBankConfig::new(j, l, n)).unwrap(),
            ScatterConfig::new(j, l),
        )
    }

    fn texture(n: usize, seed: u64) -> Vec<f64> {
        (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64, (i % n) as f64);
                let s = seed as f64;
                0.5 + 0.2 * (0.7 * x + 0.3 * y + s).sin() + 0.1 * (1.9 * y - 0.4 * x + 2.0 * s).cos()
            })
            .collect()
    }

    #[test]
    fn channel_formula_small_cases() {
        assert_eq!(channel_count(2, 16, 2), 289);
        assert_eq!(channel_count(1, 4, 2), 5);
        assert_eq!(channel_count(2, 8, 1), 17);
        assert_eq!(enumerate_paths(3, 4, 2).len(), channel_count(3, 4, 2));
    }

    #[test]
    fn paths_are_sorted() {
        let paths = enumerate_paths(3, 4, 2);
        assert!(paths.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn output_shape_and_nonnegativity() {
        let (bank, cfg) = setup(2, 4, 32);
        let s = scatter(&texture(32, 1), &bank, &cfg).unwrap();
        assert_eq!(s.shape(), (channel_count(2, 4, 2), 8, 8));
        assert!(s.data().iter().all(|&v| v >= -1e-6));
    }

    #[test]
    fn constant_image_has_no_bandpass_energy() {
        let (bank, cfg) = setup(2, 8, 32);
        let c = 0.37;
        let s = scatter(&vec![c; 32 * 32], &bank, &cfg).unwrap();
        assert!(s.channel(0).iter().all(|v| (v - c).abs() < 1e-9));
        for ch in 1..s.channels() {
            assert!(s.channel(ch).iter().all(|v| v.abs() < 1e-6), "channel {ch}");
        }
    }

    #[test]
    fn order_one_is_prefix_of_order_two() {
        let (bank, mut cfg) = setup(2, 4, 32);
        let x = texture(32, 3);
        let full = scatter(&x, &bank, &cfg).unwrap();
        cfg.order = 1;
        let first = scatter(&x, &bank, &cfg).unwrap();
        assert_eq!(first.channels(), 9);
        assert_eq!(first.data(), &full.data()[..first.data().len()]);
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let (bank, cfg) = setup(2, 4, 32);
        let err = scatter(&vec![0.0; 16 * 16], &bank, &cfg).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let img = Image::zeros(3, 70, 70);
        assert!(scatter_color(&img, &bank, &cfg).is_err());
    }

    #[test]
    fn color_requires_three_planes() {
        let (bank, cfg) = setup(1, 4, 16);
        let err = scatter_color(&Image::zeros(1, 16, 16), &bank, &cfg).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let s = scatter_color(&Image::zeros(3, 16, 16), &bank, &cfg).unwrap();
        assert_eq!(s.shape(), (15, 8, 8));
        assert_eq!(s.paths()[5].plane, 1);
    }

    #[test]
    fn pad_policies_reach_bank_size() {
        let img = Image::filled(3, 24, 24, 0.5);
        let r = fit_to_grid(&img, 32, PadPolicy::ResizeToPow2).unwrap();
        assert_eq!((r.height(), r.width()), (32, 32));
        assert!(r.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
        let z = fit_to_grid(&img, 32, PadPolicy::ZeroPadToPow2).unwrap();
        assert_eq!(z.get(0, 0, 0), 0.0);
        assert_eq!(z.get(0, 16, 16), 0.5);
    }

    #[test]
    fn pooled_grid_averages() {
        let (bank, cfg) = setup(1, 4, 16);
        let s = scatter(&texture(16, 2), &bank, &cfg).unwrap();
        let global = s.pooled(1);
        let quad = s.pooled(2);
        assert_eq!(quad.len(), 4 * global.len());
        for c in 0..s.channels() {
            let mean4: f64 = quad[c * 4..c * 4 + 4].iter().sum::<f64>() / 4.0;
            assert!((mean4 - global[c]).abs() < 1e-12);
        }
    }
}
