//! Trainable heads on top of the fixed scattering encoder: the residual MLP
//! adapter `f_h`, the projection head `g_z`, the pretext classifier `g_t` and
//! the linear probe.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scattering::ScatteringCoeffs;
use crate::tensornet::{BatchStats, Graph, Mode, ParamSet, Tensor, Var};

/// Running-statistics update rate for batch norm.
pub const BN_MOMENTUM: f64 = 0.1;
/// Floor on the per-feature standard deviation used for standardization.
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub block_count: usize,
    pub hidden_dim: usize,
    pub repr_dim: usize,
    /// Each scattering map is average-pooled over a `pool_grid × pool_grid`
    /// partition; `1` is global average pooling.
    pub pool_grid: usize,
    /// Standardize pooled features with training-set statistics.
    pub standardize: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            block_count: 12,
            hidden_dim: 512,
            repr_dim: 512,
            pool_grid: 2,
            standardize: true,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_count < 1 {
            return Err(Error::Config("block_count must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.repr_dim == 0 || self.pool_grid == 0 {
            return Err(Error::Config("adapter dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Exact trainable parameter count for `input_dim` pooled features.
    pub fn param_count(&self, input_dim: usize) -> usize {
        let (h, r) = (self.hidden_dim, self.repr_dim);
        let block = 2 * (h * h + h) + 2 * h;
        input_dim * h + h + self.block_count * block + h * r + r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadsConfig {
    pub proj_dim: usize,
    /// Width of the hidden layer in the projection and pretext heads.
    pub head_hidden: usize,
    pub pretext_classes: usize,
    pub dropout: f64,
}

impl Default for HeadsConfig {
    fn default() -> Self {
        Self {
            proj_dim: 128,
            head_hidden: 512,
            pretext_classes: 4,
            dropout: 0.2,
        }
    }
}

impl HeadsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proj_dim == 0 || self.head_hidden == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.pretext_classes != 0 && ![4, 35].contains(&self.pretext_classes) {
            log::warn!("{} pretext classes; rotation uses 4 and jigsaw 35", self.pretext_classes);
        }
        Ok(())
    }
}

fn dense(g: &mut Graph, p: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{prefix}.weight"))?;
    let b = g.param(p, &format!("{prefix}.bias"))?;
    g.dense(x, w, b)
}

/// Pools each sample's scattering maps into one feature row.
pub fn pool_features(coeffs: &[ScatteringCoeffs], grid: usize) -> Result<Tensor> {
    ensure!(!coeffs.is_empty(), "no scattering coefficients to pool");
    let shape = coeffs[0].shape();
    ensure!(
        coeffs.iter().all(|c| c.shape() == shape),
        "scattering batch has mixed shapes"
    );
    let rows: Vec<Vec<f64>> = coeffs.iter().map(|c| c.pooled(grid)).collect();
    Tensor::from_rows(&rows)
}

/// Residual MLP aggregating pooled scattering features into `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub config: AdapterConfig,
    pub input_dim: usize,
    pub params: ParamSet,
}

/// Adapter output plus the batch statistics of every batch-norm layer in
/// training mode.
pub struct AdapterOut {
    pub h: Var,
    pub bn_stats: Vec<(usize, BatchStats)>,
}

impl Adapter {
    pub fn new(config: AdapterConfig, input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        ensure!(input_dim > 0, "adapter input dimension is zero");
        let h = config.hidden_dim;
        let mut params = ParamSet::new("adapter");
        params.add_dense("input", input_dim, h, rng)?;
        for i in 0..config.block_count {
            params.add_dense(&format!("block{i}.fc1"), h, h, rng)?;
            params.add(&format!("block{i}.bn.gamma"), Tensor::filled(&[h], 1.0))?;
            params.add(&format!("block{i}.bn.beta"), Tensor::zeros(&[h]))?;
            params.add_dense(&format!("block{i}.fc2"), h, h, rng)?;
            params.set_buffer(&format!("block{i}.bn.running_mean"), Tensor::zeros(&[h]));
            params.set_buffer(&format!("block{i}.bn.running_var"), Tensor::filled(&[h], 1.0));
        }
        params.add_dense("output", h, config.repr_dim, rng)?;
        if config.standardize {
            params.set_buffer("standardize.mean", Tensor::zeros(&[input_dim]));
            params.set_buffer("standardize.std", Tensor::filled(&[input_dim], 1.0));
        }
        Ok(Self { config, input_dim, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_params()
    }

    /// Sets standardization statistics from a matrix of raw pooled features.
    pub fn fit_standardization(&mut self, features: &Tensor) -> Result<()> {
        if !self.config.standardize {
            return Ok(());
        }
        let (n, d) = features.dims2()?;
        ensure!(d == self.input_dim, "feature width {d} vs adapter input {}", self.input_dim);
        ensure!(n >= 1, "no samples for standardization");
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
        self.params.assign_buffer("standardize.mean", Tensor::vector(mean))?;
        self.params.assign_buffer("standardize.std", Tensor::vector(std))?;
        Ok(())
    }

    /// Pooled, standardized input rows for a batch of scattering outputs.
    pub fn prepare(&self, coeffs: &[ScatteringCoeffs]) -> Result<Tensor> {
        let raw = pool_features(coeffs, self.config.pool_grid)?;
        self.standardize(raw)
    }

    pub fn standardize(&self, mut raw: Tensor) -> Result<Tensor> {
        let (_, d) = raw.dims2()?;
        ensure!(
            d == self.input_dim,
            "pooled scattering has {d} features, adapter expects {}",
            self.input_dim
        );
        if let (Some(mean), Some(std)) = (
            self.params.buffer("standardize.mean"),
            self.params.buffer("standardize.std"),
        ) {
            let (m, s) = (mean.data().to_vec(), std.data().to_vec());
            for (i, v) in raw.data_mut().iter_mut().enumerate() {
                *v = (*v - m[i % d]) / s[i % d];
            }
        }
        Ok(raw)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mode: Mode) -> Result<AdapterOut> {
        let (_, d) = g.value(x).dims2()?;
        ensure!(d == self.input_dim, "adapter input width {d}, expected {}", self.input_dim);
        let p = &self.params;
        let mut h = dense(g, p, "input", x)?;
        let mut bn_stats = Vec::new();
        for i in 0..self.config.block_count {
            let a = dense(g, p, &format!("block{i}.fc1"), h)?;
            let gamma = g.param(p, &format!("block{i}.bn.gamma"))?;
            let beta = g.param(p, &format!("block{i}.bn.beta"))?;
            let n = match mode {
                Mode::Train => {
                    let (v, stats) = g.batch_norm_train(a, gamma, beta)?;
                    bn_stats.push((i, stats));
                    v
                }
                Mode::Eval => {
                    let mean = p.buffer(&format!("block{i}.bn.running_mean")).ok_or_else(|| Error::MissingParam(format!("block{i}.bn.running_mean")))?;
                    let var = p.buffer(&format!("block{i}.bn.running_var")).ok_or_else(|| Error::MissingParam(format!("block{i}.bn.running_var")))?;
                    let (mean, var) = (mean.data().to_vec(), var.data().to_vec());
                    g.batch_norm_eval(a, gamma, beta, &mean, &var)?
                }
            };
            let r = g.relu(n);
            let b = dense(g, p, &format!("block{i}.fc2"), r)?;
            h = g.add(h, b)?;
        }
        let h = dense(g, p, "output", h)?;
        Ok(AdapterOut { h, bn_stats })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats)]) -> Result<()> {
        for (i, s) in stats {
            for (name, fresh) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let key = format!("block{i}.bn.{name}");
                let buf = self.params.buffer_mut(&key).ok_or_else(|| Error::MissingParam(key.clone()))?;
                for (r, f) in buf.data_mut().iter_mut().zip(fresh) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * f;
                }
            }
        }
        Ok(())
    }

    /// `h` for a batch of scattering outputs in eval mode.
    pub fn embed(&self, coeffs: &[ScatteringCoeffs]) -> Result<Tensor> {
        let x = self.prepare(coeffs)?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let out = self.forward(&mut g, xv, Mode::Eval)?;
        Ok(g.value(out.h).clone())
    }
}

/// `z = normalize(W₂·relu(W₁h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub params: ParamSet,
}

impl ProjectionHead {
    pub fn new(repr_dim: usize, cfg: &HeadsConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamSet::new("projection");
        params.add_dense("fc1", repr_dim, cfg.head_hidden, rng)?;
        params.add_dense("fc2", cfg.head_hidden, cfg.proj_dim, rng)?;
        Ok(Self { params })
    }

    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let a = dense(g, &self.params, "fc1", h)?;
        let r = g.relu(a);
        let b = dense(g, &self.params, "fc2", r)?;
        g.l2_normalize(b)
    }
}

/// Dense → dropout → ReLU → dense → softmax over pretext classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextHead {
    pub params: ParamSet,
    pub classes: usize,
    pub dropout: f64,
}

/// Pre-softmax logits (fed to the loss) and class probabilities `t̂`.
pub struct HeadOut {
    pub logits: Var,
    pub probs: Var,
}

impl PretextHead {
    pub fn new(repr_dim: usize, cfg: &HeadsConfig, rng: &mut impl Rng) -> Result<Self> {
        ensure!(cfg.pretext_classes >= 2, "pretext head needs at least two classes");
        let mut params = ParamSet::new("pretext");
        params.add_dense("fc1", repr_dim, cfg.head_hidden, rng)?;
        params.add_dense("fc2", cfg.head_hidden, cfg.pretext_classes, rng)?;
        Ok(Self {
            params,
            classes: cfg.pretext_classes,
            dropout: cfg.dropout,
        })
    }

    pub fn forward(&self, g: &mut Graph, h: Var, mode: Mode, rng: &mut impl Rng) -> Result<HeadOut> {
        let a = dense(g, &self.params, "fc1", h)?;
        let d = g.dropout(a, self.dropout, mode, rng)?;
        let r = g.relu(d);
        let logits = dense(g, &self.params, "fc2", r)?;
        let probs = g.softmax(logits)?;
        Ok(HeadOut { logits, probs })
    }
}

/// Single dense layer plus softmax, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub params: ParamSet,
    pub classes: usize,
}

impl LinearProbe {
    pub fn new(repr_dim: usize, classes: usize) -> Result<Self> {
        ensure!(classes >= 2, "probe needs at least two classes");
        let mut params = ParamSet::new("probe");
        params.add("fc.weight", Tensor::zeros(&[repr_dim, classes]))?;
        params.add("fc.bias", Tensor::zeros(&[classes]))?;
        Ok(Self { params, classes })
    }

    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<HeadOut> {
        let logits = dense(g, &self.params, "fc", h)?;
        let probs = g.softmax(logits)?;
        Ok(HeadOut { logits, probs })
    }

    /// Argmax class per row (lowest index on ties).
    pub fn predict(&self, h: &Tensor) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let hv = g.input(h.clone());
        let out = self.forward(&mut g, hv)?;
        let probs = g.value(out.probs);
        let (rows, _) = probs.dims2()?;
        Ok((0..rows)
            .map(|r| {
                probs.row(r).iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                    if p > best.1 { (i, p) } else { best }
                }).0
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn small() -> AdapterConfig {
        AdapterConfig {
            block_count: 2,
            hidden_dim: 8,
            repr_dim: 6,
            pool_grid: 1,
            standardize: false,
        }
    }

    #[test]
    fn counts_follow_layer_sizes() {
        let cfg = small();
        let a = Adapter::new(cfg.clone(), 5, &mut stream_rng(0, Stream::Init, &[])).unwrap();
        assert_eq!(a.param_count(), cfg.param_count(5));
        let probe = LinearProbe::new(6, 3).unwrap();
        assert_eq!(probe.params.num_params(), 6 * 3 + 3);
        let mut prev = 0;
        for blocks in [8, 12, 16, 30] {
            let n = AdapterConfig { block_count: blocks, ..AdapterConfig::default() }.param_count(867);
            assert!(n > prev);
            prev = n;
        }
    }

    #[test]
    fn shapes_and_unit_rows() {
        let mut rng = stream_rng(1, Stream::Init, &[]);
        let a = Adapter::new(small(), 5, &mut rng).unwrap();
        let heads = HeadsConfig { proj_dim: 3, head_hidden: 32, pretext_classes: 4, dropout: 0.0 };
        let proj = ProjectionHead::new(6, &heads, &mut rng).unwrap();
        let pre = PretextHead::new(6, &heads, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![4, 5], (0..20).map(|v| v as f64 / 10.0).collect()).unwrap());
        let out = a.forward(&mut g, x, Mode::Train).unwrap();
        assert_eq!(g.value(out.h).shape(), &[4, 6]);
        assert_eq!(out.bn_stats.len(), 2);
        let z = proj.forward(&mut g, out.h).unwrap();
        for r in 0..4 {
            let n: f64 = g.value(z).row(r).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-6);
        }
        let t = pre.forward(&mut g, out.h, Mode::Train, &mut rng).unwrap();
        for r in 0..4 {
            assert!((g.value(t.probs).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let bad = g.input(Tensor::zeros(&[4, 4]));
        assert!(a.forward(&mut g, bad, Mode::Eval).is_err());
    }

    #[test]
    fn eval_forward_is_pure() {
        let a = Adapter::new(small(), 5, &mut stream_rng(2, Stream::Init, &[])).unwrap();
        let run = || {
            let mut g = Graph::new();
            let x = g.input(Tensor::filled(&[3, 5], 0.3));
            let o = a.forward(&mut g, x, Mode::Eval).unwrap();
            g.value(o.h).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_probe_is_uniform() {
        let probe = LinearProbe::new(4, 5).unwrap();
        let mut g = Graph::new();
        let h = g.input(Tensor::filled(&[2, 4], 1.7));
        let out = probe.forward(&mut g, h).unwrap();
        assert!(g.value(out.probs).data().iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn standardization_centers_features() {
        let mut cfg = small();
        cfg.standardize = true;
        let mut a = Adapter::new(cfg, 2, &mut stream_rng(3, Stream::Init, &[])).unwrap();
        let f = Tensor::matrix(3, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        a.fit_standardization(&f).unwrap();
        let s = a.standardize(f).unwrap();
        for c in 0..2 {
            let m: f64 = (0..3).map(|r| s.at2(r, c)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
        }
    }
}
