//! Square 2D FFTs on row-major complex grids, plus the spectral
//! (de)periodization helpers used by the scattering cascade.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward/inverse transforms for one `n×n` grid size. Cheap to clone and `Sync`.
#[derive(Clone)]
pub struct Fft2d {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d").field("n", &self.n).finish()
    }
}

impl Fft2d {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(&*self.fwd, data);
    }

    /// Inverse transform including the `1/n²` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(&*self.inv, data);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    fn run(&self, plan: &dyn Fft<f64>, data: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "fft buffer is not {n}x{n}");
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        transpose_in_place(data, n);
        plan.process_with_scratch(data, &mut scratch);
        transpose_in_place(data, n);
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

fn transpose_in_place(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// Spectrum of the spatial subsampling `x[k·m]` of the signal whose spectrum is
/// `spec` (`n×n`): the average over the `k²` aliases of each coarse frequency.
pub fn subsample_spectrum(spec: &[Complex64], n: usize, k: usize) -> Vec<Complex64> {
    if k == 1 {
        return spec.to_vec();
    }
    let m = n / k;
    let mut out = vec![Complex64::default(); m * m];
    for a in 0..k {
        for r in 0..m {
            let src_row = &spec[(a * m + r) * n..(a * m + r + 1) * n];
            let dst_row = &mut out[r * m..(r + 1) * m];
            for b in 0..k {
                for (d, s) in dst_row.iter_mut().zip(&src_row[b * m..(b + 1) * m]) {
                    *d += *s;
                }
            }
        }
    }
    let scale = 1.0 / (k * k) as f64;
    for v in &mut out {
        *v *= scale;
    }
    out
}

/// Alias sum of a real `n×n` frequency response onto an `(n/k)×(n/k)` grid. In
/// space this is `k²·h[k·m]`, the filter sampled on the coarse lattice.
pub fn periodize_response(resp: &[f64], n: usize, k: usize) -> Vec<f64> {
    let m = n / k;
    let mut out = vec![0.0; m * m];
    for r in 0..n {
        for c in 0..n {
            out[(r % m) * m + (c % m)] += resp[r * n + c];
        }
    }
    out
}
