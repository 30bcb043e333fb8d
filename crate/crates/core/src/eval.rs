//! Linear evaluation of a frozen encoder and representation export.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::ImageSource;
use crate::error::{ensure, Result};
use crate::featfile::FeatureWriter;
use crate::filterbank::{FilterBank, FilterBankConfig};
use crate::losses::{one_hot, pretext_loss};
use crate::network::{Adapter, LinearProbe};
use crate::rng::{stream_rng, Stream};
use crate::scattering::ScatterConfig;
use crate::tensornet::{Graph, Tensor};
use crate::trainer::{embed_images, Checkpoint, OptimConfig, Optimizer, Trainer};

/// Images embedded per scattering batch.
const EMBED_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of each class held out for scoring.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-2,
            weight_decay: 0.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub run: usize,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_count: usize,
    pub test_count: usize,
}

/// The frozen part of a trained model: scattering plus adapter.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub adapter: Adapter,
    pub bank: FilterBank,
    pub scatter: ScatterConfig,
}

impl Encoder {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = &ckpt.config;
        let bank = FilterBank::build(FilterBankConfig::new(cfg.scales, cfg.orientations, cfg.image_size))?;
        let mut adapter = Adapter::new(cfg.adapter.clone(), ckpt.input_dim, &mut stream_rng(cfg.seed, Stream::Init, &[0]))?;
        ckpt.restore_into("adapter", &mut adapter.params)?;
        Ok(Self {
            adapter,
            bank,
            scatter: cfg.scatter_config(),
        })
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            adapter: t.model.adapter.clone(),
            bank: t.bank().clone(),
            scatter: t.config.scatter_config(),
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.adapter.config.repr_dim
    }

    /// Eval-mode representations, one row per image, in dataset order.
    pub fn embed_dataset(&self, data: &dyn ImageSource) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(data.len() * self.repr_dim());
        self.for_each_chunk(data, |h| {
            rows.extend_from_slice(h.data());
            Ok(())
        })?;
        Tensor::new(vec![data.len(), self.repr_dim()], rows)
    }

    fn for_each_chunk(&self, data: &dyn ImageSource, mut f: impl FnMut(&Tensor) -> Result<()>) -> Result<()> {
        let mut start = 0;
        while start < data.len() {
            let end = (start + EMBED_CHUNK).min(data.len());
            let images = (start..end).map(|i| data.get(i)).collect::<Result<Vec<_>>>()?;
            f(&embed_images(&self.adapter, &self.bank, &self.scatter, &images)?)?;
            start = end;
        }
        Ok(())
    }
}

/// Labels of every image, checked against the class count.
pub fn dataset_labels(data: &dyn ImageSource) -> Result<Vec<usize>> {
    let labels = data.labels()?;
    let k = data.num_classes();
    ensure!(k >= 2, "linear evaluation needs at least two classes, dataset has {k}");
    let max = labels.iter().copied().max().unwrap_or(0);
    ensure!(max < k, "label {max} is out of range for {k} classes");
    Ok(labels)
}

/// Per-class shuffled split into `(train, test)` row indices.
pub fn stratified_split(labels: &[usize], classes: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    ensure!((0.0..1.0).contains(&test_fraction), "test fraction must lie in [0, 1), got {test_fraction}");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rows.shuffle(&mut stream_rng(seed, Stream::Split, &[c as u64]));
        let n_test = (rows.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Best accuracy over repeated runs.
pub fn top1_of_runs(accuracies: &[f64]) -> Option<f64> {
    accuracies.iter().copied().reduce(f64::max)
}

fn select_rows(x: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (_, d) = x.dims2()?;
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Tensor::new(vec![rows.len(), d], data)
}

/// Column statistics of `x`; constant columns get a unit scale.
fn column_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, d) = x.dims2()?;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n as f64;
        }
    }
    for r in 0..n {
        for ((s, m), v) in std.iter_mut().zip(&mean).zip(x.row(r)) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
    }
    Ok((mean, std))
}

fn apply_stats(x: &mut Tensor, mean: &[f64], std: &[f64]) {
    let d = mean.len();
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v = (*v - mean[i % d]) / std[i % d];
    }
}

/// Fits a zero-initialized probe on `x` by full-batch Adam.
pub fn train_probe(x: &Tensor, labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<LinearProbe> {
    let (n, d) = x.dims2()?;
    ensure!(labels.len() == n, "{} labels for {n} rows", labels.len());
    let mut probe = LinearProbe::new(d, classes)?;
    let targets = one_hot(labels, classes)?;
    let mut opt = Optimizer::new(OptimConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..OptimConfig::default()
    });
    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = probe.forward(&mut g, xv)?;
        let loss = pretext_loss(&mut g, out.logits, &targets)?;
        let grads = g.backward(loss)?;
        probe.params.zero_grad();
        probe.params.accumulate(&grads)?;
        opt.step(&mut [&mut probe.params])?;
    }
    Ok(probe)
}

/// Splits, standardizes with training statistics, trains and scores one probe.
pub fn probe_features(features: &Tensor, labels: &[usize], classes: usize, cfg: &ProbeConfig, run: usize) -> Result<ProbeResult> {
    let seed = cfg.seed.wrapping_add(run as u64);
    let (train, test) = stratified_split(labels, classes, cfg.test_fraction, seed)?;
    ensure!(!train.is_empty(), "training split is empty");
    let mut x_train = select_rows(features, &train)?;
    let mut x_test = select_rows(features, &test)?;
    let (mean, std) = column_stats(&x_train)?;
    apply_stats(&mut x_train, &mean, &std);
    apply_stats(&mut x_test, &mean, &std);
    let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let probe = train_probe(&x_train, &y_train, classes, cfg)?;
    let train_accuracy = accuracy(&probe.predict(&x_train)?, &y_train);
    let test_accuracy = if test.is_empty() {
        train_accuracy
    } else {
        accuracy(&probe.predict(&x_test)?, &y_test)
    };
    Ok(ProbeResult {
        run,
        seed,
        train_accuracy,
        test_accuracy,
        train_count: train.len(),
        test_count: test.len(),
    })
}

/// Embeds `data` once and fits `runs` probes on differently seeded splits.
pub fn linear_eval(encoder: &Encoder, data: &dyn ImageSource, cfg: &ProbeConfig, runs: usize) -> Result<Vec<ProbeResult>> {
    ensure!(runs >= 1, "at least one run is required");
    let labels = dataset_labels(data)?;
    let features = encoder.embed_dataset(data)?;
    (0..runs)
        .map(|r| probe_features(&features, &labels, data.num_classes(), cfg, r))
        .collect()
}

/// Writes eval-mode representations with dims `(count, repr_dim, 1, 1)`.
pub fn extract_features(encoder: &Encoder, data: &dyn ImageSource, path: &Path) -> Result<[usize; 4]> {
    let dims = [data.len(), encoder.repr_dim(), 1, 1];
    let mut w = FeatureWriter::create(path, dims)?;
    encoder.for_each_chunk(data, |h| {
        let (n, _) = h.dims2()?;
        for r in 0..n {
            w.push_row(h.row(r))?;
        }
        Ok(())
    })?;
    w.finish()?;
    Ok(dims)
}
