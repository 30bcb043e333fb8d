//! Fixed Morlet filter bank for 2D scattering.
//!
//! Filters are evaluated analytically in the frequency domain. Sampling the
//! continuous spectrum on the DFT grid and summing its `2π` aliases gives the
//! exact DFT of the Morlet sampled on the pixel lattice and periodized over the
//! image, so the 90° grid rotation acts on the bank as an exact permutation.
//!
//! Orientations are spread over the full circle, `θ_k = 2πk/L`. A quarter turn
//! is therefore the index shift `k → k + L/4`. Because orientation `k` and
//! `k + L/2` see every frequency twice, band-pass responses carry a `1/√2`
//! gain so that the Littlewood–Paley sum stays at or below one.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{periodize_response, Fft2d};
use crate::image::Image;

/// Width of the mother wavelet's Gaussian envelope, in pixels.
pub const SIGMA0: f64 = 0.8;
/// Center frequency of the mother wavelet, in radians per pixel.
pub const XI0: f64 = 3.0 * PI / 4.0;
/// Tolerance on the Littlewood–Paley sum above one.
pub const LP_EPSILON: f64 = 0.2;
/// Number of spectral aliases summed on each side of the base period.
const ALIAS_RADIUS: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterBankConfig {
    /// Number of dyadic scales `J`.
    pub scales: usize,
    /// Number of orientations `L`.
    pub orientations: usize,
    /// Side of the square grid the bank is built for.
    pub size: usize,
}

impl FilterBankConfig {
    pub fn new(scales: usize, orientations: usize, size: usize) -> Self {
        Self {
            scales,
            orientations,
            size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales < 1 {
            return Err(Error::Config("scale count J must be at least 1".into()));
        }
        if self.orientations < 1 {
            return Err(Error::Config("orientation count L must be at least 1".into()));
        }
        if !self.size.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid size {} is not a power of two",
                self.size
            )));
        }
        if self.scales >= usize::BITS as usize || (1usize << self.scales) > self.size {
            return Err(Error::Config(format!(
                "2^J = 2^{} exceeds grid size {}",
                self.scales, self.size
            )));
        }
        if !(1..=4).contains(&self.scales) || !(4..=16).contains(&self.orientations) {
            log::warn!(
                "J={} L={} is outside the usual J in [1,4], L in [4,16] range",
                self.scales,
                self.orientations
            );
        }
        Ok(())
    }

    /// Angular aspect ratio of the wavelet envelope.
    pub fn slant(&self) -> f64 {
        4.0 / self.orientations as f64
    }
}

/// One band-pass filter `ψ_{j,θ}`, stored as its (real) frequency response at
/// every resolution `r ∈ 0..=j`.
#[derive(Debug, Clone)]
pub struct BandpassFilter {
    pub scale: usize,
    pub orientation: usize,
    levels: Vec<Vec<f64>>,
}

impl BandpassFilter {
    pub fn at(&self, resolution: usize) -> &[f64] {
        &self.levels[resolution]
    }

    pub fn resolutions(&self) -> usize {
        self.levels.len()
    }
}

/// The complete fixed filter bank. Immutable once built.
#[derive(Debug, Clone)]
pub struct FilterBank {
    config: FilterBankConfig,
    bandpass: Vec<BandpassFilter>,
    lowpass: Vec<Vec<f64>>,
    ffts: Vec<Fft2d>,
}

/// Frequency response of a Gaussian-windowed plane wave, alias-summed.
///
/// `sigma` is the envelope width along the wave direction, `sigma/slant` across it.
fn gabor_response(n: usize, sigma: f64, theta: f64, xi: f64, slant: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    let along = sigma * sigma;
    let across = (sigma / slant) * (sigma / slant);
    let mut out = vec![0.0; n * n];
    let freq = |k: usize| {
        let k = k as f64;
        let nf = n as f64;
        let signed = if k >= nf / 2.0 { k - nf } else { k };
        2.0 * PI * signed / nf
    };
    for r in 0..n {
        let w1 = freq(r);
        for q in 0..n {
            let w2 = freq(q);
            let mut acc = 0.0;
            for a in -ALIAS_RADIUS..=ALIAS_RADIUS {
                let o1 = w1 + 2.0 * PI * a as f64;
                for b in -ALIAS_RADIUS..=ALIAS_RADIUS {
                    let o2 = w2 + 2.0 * PI * b as f64;
                    let p = c * o1 + s * o2 - xi;
                    let t = -s * o1 + c * o2;
                    acc += (-0.5 * (along * p * p + across * t * t)).exp();
                }
            }
            out[r * n + q] = acc;
        }
    }
    out
}

fn morlet_response(n: usize, sigma: f64, theta: f64, xi: f64, slant: f64) -> Vec<f64> {
    let wave = gabor_response(n, sigma, theta, xi, slant);
    let envelope = gabor_response(n, sigma, theta, 0.0, slant);
    // Admissibility: remove the envelope share that leaks into DC.
    let k = wave[0] / envelope[0];
    wave.iter()
        .zip(&envelope)
        .map(|(w, e)| FRAC_1_SQRT_2 * (w - k * e))
        .collect()
}

impl FilterBank {
    pub fn build(config: FilterBankConfig) -> Result<Self> {
        config.validate()?;
        let n = config.size;
        let j_max = config.scales;
        let l = config.orientations;
        let slant = config.slant();

        let bandpass = (0..j_max * l)
            .into_par_iter()
            .map(|idx| {
                let (j, t) = (idx / l, idx % l);
                let scale = (1usize << j) as f64;
                let theta = 2.0 * PI * t as f64 / l as f64;
                let full = morlet_response(n, SIGMA0 * scale, theta, XI0 / scale, slant);
                let levels = (0..=j)
                    .map(|r| {
                        if r == 0 {
                            full.clone()
                        } else {
                            periodize_response(&full, n, 1 << r)
                        }
                    })
                    .collect();
                BandpassFilter {
                    scale: j,
                    orientation: t,
                    levels,
                }
            })
            .collect();

        let mut phi = gabor_response(n, SIGMA0 * (1usize << j_max) as f64, 0.0, 0.0, 1.0);
        let dc = phi[0];
        for v in &mut phi {
            *v /= dc;
        }
        let lowpass = (0..=j_max)
            .map(|r| {
                if r == 0 {
                    phi.clone()
                } else {
                    periodize_response(&phi, n, 1 << r)
                }
            })
            .collect();

        let ffts = (0..=j_max).map(|r| Fft2d::new(n >> r)).collect();
        Ok(Self {
            config,
            bandpass,
            lowpass,
            ffts,
        })
    }

    pub fn config(&self) -> &FilterBankConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.config.size
    }

    /// Side of the grid at resolution `r` (the full grid subsampled by `2^r`).
    pub fn size_at(&self, resolution: usize) -> usize {
        self.config.size >> resolution
    }

    pub fn bandpass(&self) -> &[BandpassFilter] {
        &self.bandpass
    }

    pub fn psi(&self, scale: usize, orientation: usize) -> &BandpassFilter {
        &self.bandpass[scale * self.config.orientations + orientation]
    }

    pub fn phi(&self, resolution: usize) -> &[f64] {
        &self.lowpass[resolution]
    }

    pub fn fft(&self, resolution: usize) -> &Fft2d {
        &self.ffts[resolution]
    }

    /// `|φ̂|² + ½ Σ (|ψ̂(ω)|² + |ψ̂(−ω)|²)` at every full-resolution frequency.
    pub fn littlewood_paley(&self) -> Vec<f64> {
        let n = self.config.size;
        let mut lp: Vec<f64> = self.lowpass[0].iter().map(|v| v * v).collect();
        for f in &self.bandpass {
            let psi = f.at(0);
            for r in 0..n {
                let rn = (n - r) % n;
                for c in 0..n {
                    let cn = (n - c) % n;
                    let a = psi[r * n + c];
                    let b = psi[rn * n + cn];
                    lp[r * n + c] += 0.5 * (a * a + b * b);
                }
            }
        }
        lp
    }

    pub fn littlewood_paley_max(&self) -> f64 {
        self.littlewood_paley().into_iter().fold(f64::MIN, f64::max)
    }

    /// Space-domain band-pass filter at full resolution, origin at index 0.
    pub fn spatial_psi(&self, scale: usize, orientation: usize) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self
            .psi(scale, orientation)
            .at(0)
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.ffts[0].inverse(&mut buf);
        buf
    }

    pub fn spatial_phi(&self) -> Vec<f64> {
        let mut buf: Vec<Complex64> = self.lowpass[0]
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.ffts[0].inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// What [`dump_filters`] wrote.
#[derive(Debug, Clone)]
pub struct DumpReport {
    /// One image per filter part: real and imaginary for each band-pass, plus the low-pass.
    pub filter_images: Vec<PathBuf>,
    /// All filters tiled with scales as rows and orientations as columns.
    pub mosaic: PathBuf,
    pub manifest: PathBuf,
}

fn centered(values: &[f64], n: usize) -> Vec<f64> {
    let h = n / 2;
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[((r + h) % n) * n + (c + h) % n] = values[r * n + c];
        }
    }
    out
}

fn signed_to_gray(values: &[f64], n: usize) -> Image {
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let data = values
        .iter()
        .map(|v| (0.5 + 0.5 * v / peak) as f32)
        .collect();
    Image::from_planar(1, n, n, data).expect("square buffer")
}

/// Renders every filter in the space domain (real and imaginary parts) as PNGs,
/// plus a mosaic and a plain-text manifest.
pub fn dump_filters(bank: &FilterBank, dir: &Path) -> Result<DumpReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = bank.size();
    let cfg = bank.config();
    let (rows, cols) = (cfg.scales + 1, 2 * cfg.orientations);
    let mut mosaic = Image::filled(1, rows * n, cols * n, 0.5);
    let mut images = Vec::new();
    let mut manifest = String::from("# file kind scale orientation part mosaic_row mosaic_col\n");

    let phi = signed_to_gray(&centered(&bank.spatial_phi(), n), n);
    let phi_path = dir.join("phi.png");
    phi.save_png(&phi_path)?;
    mosaic.paste(&phi, 0, 0)?;
    manifest.push_str(&format!("phi.png lowpass {} - real 0 0\n", cfg.scales));
    images.push(phi_path);

    for f in bank.bandpass() {
        let spatial = bank.spatial_psi(f.scale, f.orientation);
        let parts: [(&str, Vec<f64>); 2] = [
            ("real", spatial.iter().map(|c| c.re).collect()),
            ("imag", spatial.iter().map(|c| c.im).collect()),
        ];
        for (k, (part, values)) in parts.iter().enumerate() {
            let img = signed_to_gray(&centered(values, n), n);
            let name = format!("psi_j{}_t{}_{}.png", f.scale, f.orientation, part);
            let path = dir.join(&name);
            img.save_png(&path)?;
            let (row, col) = (f.scale + 1, k * cfg.orientations + f.orientation);
            mosaic.paste(&img, row * n, col * n)?;
            manifest.push_str(&format!(
                "{name} bandpass {} {} {part} {row} {col}\n",
                f.scale, f.orientation
            ));
            images.push(path);
        }
    }

    let mosaic_path = dir.join("mosaic.png");
    mosaic.save_png(&mosaic_path)?;
    let manifest_path = dir.join("manifest.txt");
    let mut file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    file.write_all(manifest.as_bytes())
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(DumpReport {
        filter_images: images,
        mosaic: mosaic_path,
        manifest: manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(j: usize, l: usize, n: usize) -> FilterBank {
        FilterBank::build(FilterBankConfig::new(j, l, n)).unwrap()
    }

    #[test]
    fn rejects_non_power_of_two_and_oversized_scale() {
        let err = FilterBank::build(FilterBankConfig::new(2, 16, 96)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = FilterBank::build(FilterBankConfig::new(6, 4, 32)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(FilterBank::build(FilterBankConfig::new(5, 4, 32)).is_ok());
    }

    #[test]
    fn filter_counts_and_resolutions() {
        let b = bank(2, 16, 128);
        assert_eq!(b.bandpass().len(), 32);
        let b = bank(1, 4, 32);
        assert_eq!(b.bandpass().len(), 4);
        assert!(b.bandpass().iter().all(|f| f.resolutions() == 1));
        // low-pass exists at resolutions 0 and 1
        assert_eq!(b.phi(0).len(), 32 * 32);
        assert_eq!(b.phi(1).len(), 16 * 16);
    }

    #[test]
    fn zero_mean_and_nonnegative_lowpass() {
        let b = bank(3, 8, 64);
        for f in b.bandpass() {
            assert!(f.at(0)[0].abs() <= 1e-6);
        }
        for r in 0..=3 {
            assert!(b.phi(r).iter().all(|&v| v >= 0.0));
        }
        assert!((b.phi(0)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lowpass_is_real_in_space() {
        // spatial_phi discards the imaginary part; check it was negligible.
        let b = bank(2, 4, 32);
        let mut buf: Vec<Complex64> = b.phi(0).iter().map(|&v| Complex64::new(v, 0.0)).collect();
        b.fft(0).inverse(&mut buf);
        assert!(buf.iter().all(|c| c.im.abs() < 1e-12));
    }

    #[test]
    fn littlewood_paley_bound() {
        for (j, l, n) in [(2, 16, 128), (1, 4, 32), (4, 12, 64)] {
            let m = bank(j, l, n).littlewood_paley_max();
            assert!(m <= 1.0 + LP_EPSILON, "J={j} L={l}: LP max {m}");
        }
    }

    #[test]
    fn coarse_levels_are_subsampled_filters() {
        let b = bank(3, 4, 64);
        for f in b.bandpass() {
            let full = b.spatial_psi(f.scale, f.orientation);
            for r in 1..f.resolutions() {
                let k = 1usize << r;
                let m = 64 / k;
                let mut coarse: Vec<Complex64> =
                    f.at(r).iter().map(|&v| Complex64::new(v, 0.0)).collect();
                b.fft(r).inverse(&mut coarse);
                let (mut num, mut den) = (0.0, 0.0);
                for y in 0..m {
                    for x in 0..m {
                        let expect = full[(y * k) * 64 + x * k] * (k * k) as f64;
                        num += (coarse[y * m + x] - expect).norm_sqr();
                        den += expect.norm_sqr();
                    }
                }
                assert!((num / den).sqrt() < 1e-6);
            }
        }
    }

    #[test]
    fn quarter_turn_permutes_orientations() {
        let n = 32;
        let l = 8;
        let b = bank(2, l, n);
        for j in 0..2 {
            for t in 0..l {
                let src = b.spatial_psi(j, t);
                let dst = b.spatial_psi(j, (t + l / 4) % l);
                // dst(y, x) = src(x, -y): quarter turn about the origin pixel
                let mut err = 0.0f64;
                let mut peak = 0.0f64;
                for y in 0..n {
                    for x in 0..n {
                        let rotated = src[x * n + (n - y) % n];
                        err = err.max((rotated - dst[y * n + x]).norm());
                        peak = peak.max(dst[y * n + x].norm());
                    }
                }
                assert!(err <= 1e-9 * peak, "j={j} t={t}: {err}");
            }
        }
    }

    #[test]
    fn dump_writes_expected_images() {
        let dir = tempfile::tempdir().unwrap();
        let report = dump_filters(&bank(1, 4, 32), dir.path()).unwrap();
        assert_eq!(report.filter_images.len(), 9);
        assert!(report.mosaic.exists());
        let text = std::fs::read_to_string(&report.manifest).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 9);
    }
}
