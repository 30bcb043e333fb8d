//! Joint optimization of the contrastive and pretext objectives.
//!
//! Every random choice is keyed by counters: the epoch permutation by
//! `(seed, epoch)`, the two views of a sample by `(seed, epoch, sample)`,
//! dropout masks by `(seed, step)` and parameter initialization by
//! `(seed, head)`. A run therefore depends only on the configuration, and a
//! resumed run continues exactly where an uninterrupted one would be.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::Checkpoint;
pub use config::{PretextViews, TrainConfig};
pub use optim::{Moments, OptimConfig, OptimKind, Optimizer};

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::jigsaw::JigsawTable;
use crate::augment::{PretextTask, ViewGenerator};
use crate::datasets::ImageSource;
use crate::error::{ensure, Error, Result};
use crate::filterbank::{FilterBank, FilterBankConfig};
use crate::image::Image;
use crate::losses::{nt_xent, one_hot, pretext_loss, total_loss, LossWeights};
use crate::network::{pool_features, Adapter, PretextHead, ProjectionHead};
use crate::rng::{stream_rng, Stream};
use crate::scattering::{fit_to_grid, scatter_color, ScatterConfig, ScatteringCoeffs};
use crate::tensornet::{Graph, Mode, ParamSet, Tensor};

pub const METRICS_HEADER: [&str; 5] = ["epoch", "contrastive_loss", "pretext_loss", "lambda", "wall_time"];

/// The trainable part of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub adapter: Adapter,
    pub projection: ProjectionHead,
    /// Absent when training without a pretext task.
    pub pretext: Option<PretextHead>,
}

impl Model {
    /// Freshly initialized heads for `config`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let heads = config.resolved_heads();
        let input_dim = adapter_input_dim(config);
        let seed = config.seed;
        let repr = config.adapter.repr_dim;
        let adapter = Adapter::new(config.adapter.clone(), input_dim, &mut stream_rng(seed, Stream::Init, &[0]))?;
        let projection = ProjectionHead::new(repr, &heads, &mut stream_rng(seed, Stream::Init, &[1]))?;
        let pretext = match config.pretext {
            PretextTask::None => None,
            _ => Some(PretextHead::new(repr, &heads, &mut stream_rng(seed, Stream::Init, &[2]))?),
        };
        Ok(Self { adapter, projection, pretext })
    }

    pub fn param_sets(&self) -> Vec<&ParamSet> {
        let mut v = vec![&self.adapter.params, &self.projection.params];
        if let Some(p) = &self.pretext {
            v.push(&p.params);
        }
        v
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut v = vec![&mut self.adapter.params, &mut self.projection.params];
        if let Some(p) = &mut self.pretext {
            v.push(&mut p.params);
        }
        v
    }

    /// Trainable parameter totals per set, then overall.
    pub fn param_report(&self) -> Vec<(String, usize)> {
        let mut rows: Vec<(String, usize)> = self
            .param_sets()
            .iter()
            .map(|s| (s.tag().to_string(), s.num_params()))
            .collect();
        let total = rows.iter().map(|r| r.1).sum();
        rows.push(("total".into(), total));
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub contrastive: f64,
    pub pretext: Option<f64>,
    pub lambda: f64,
    /// Fraction of pretext labels predicted correctly in this batch.
    pub pretext_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub contrastive_loss: f64,
    pub pretext_loss: Option<f64>,
    pub lambda: f64,
    pub wall_time: f64,
}

/// Scattering input for a batch of images: fit to the grid, scatter each color plane.
pub fn scatter_images(images: &[Image], bank: &FilterBank, cfg: &ScatterConfig) -> Result<Vec<ScatteringCoeffs>> {
    images
        .par_iter()
        .map(|img| {
            let fitted = fit_to_grid(img, bank.size(), cfg.pad_policy)?;
            scatter_color(&fitted.to_rgb()?, bank, cfg)
        })
        .collect()
}

/// Number of pooled features the adapter sees.
pub fn adapter_input_dim(cfg: &TrainConfig) -> usize {
    3 * cfg.scatter_config().channels_per_plane() * cfg.adapter.pool_grid * cfg.adapter.pool_grid
}

pub struct Trainer {
    pub config: TrainConfig,
    bank: FilterBank,
    views: ViewGenerator,
    pub model: Model,
    pub optimizer: Optimizer,
    pub weights: LossWeights,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochMetrics>,
    pool: Option<rayon::ThreadPool>,
    started: Instant,
    diagnostic_dir: Option<PathBuf>,
}

impl Trainer {
    fn build(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let bank = FilterBank::build(FilterBankConfig::new(config.scales, config.orientations, config.image_size))?;
        let seed = config.seed;
        let model = Model::new(&config)?;
        let table = match config.pretext {
            PretextTask::Jigsaw => Some(JigsawTable::build(config.jigsaw_classes, seed)?),
            _ => None,
        };
        let views = ViewGenerator::new(config.augment.clone()).with_pretext(config.pretext, table);
        let pool = match config.workers {
            0 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
            ),
        };
        Ok(Self {
            optimizer: Optimizer::new(config.optimizer.clone()),
            weights: LossWeights::new(config.lambda.clone()),
            config,
            bank,
            views,
            model,
            epoch: 0,
            step: 0,
            steps: Vec::new(),
            epochs: Vec::new(),
            pool,
            started: Instant::now(),
            diagnostic_dir: None,
        })
    }

    /// Fresh model; standardization statistics are estimated from `data`.
    pub fn new(config: TrainConfig, data: &dyn ImageSource) -> Result<Self> {
        let mut t = Self::build(config)?;
        ensure!(
            data.len() >= t.config.batch_size,
            "dataset has {} images, fewer than one batch of {}",
            data.len(),
            t.config.batch_size
        );
        if t.config.adapter.standardize {
            let k = t.config.standardize_samples.clamp(1, data.len());
            let images: Vec<Image> = (0..k).map(|i| data.get(i * data.len() / k)).collect::<Result<_>>()?;
            let coeffs = t.scatter(&images)?;
            let raw = pool_features(&coeffs, t.config.adapter.pool_grid)?;
            t.model.adapter.fit_standardization(&raw)?;
        }
        Ok(t)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::build(ckpt.config.clone())?;
        ensure!(
            ckpt.input_dim == t.model.adapter.input_dim,
            "checkpoint adapter input {} vs configuration {}",
            ckpt.input_dim,
            t.model.adapter.input_dim
        );
        ckpt.restore_into("adapter", &mut t.model.adapter.params)?;
        ckpt.restore_into("projection", &mut t.model.projection.params)?;
        if let Some(p) = &mut t.model.pretext {
            ckpt.restore_into("pretext", &mut p.params)?;
        }
        t.optimizer = ckpt.optimizer.clone();
        t.weights = ckpt.weights.clone();
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        if let Some(table) = &ckpt.jigsaw {
            t.views.jigsaw = Some(table.clone());
        }
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let sets: IndexMap<String, ParamSet> = self
            .model
            .param_sets()
            .into_iter()
            .map(|s| (s.tag().to_string(), s.clone()))
            .collect();
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            input_dim: self.model.adapter.input_dim,
            weights: self.weights.clone(),
            jigsaw: self.views.jigsaw.clone(),
            sets,
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn view_generator(&self) -> &ViewGenerator {
        &self.views
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    pub fn scatter(&self, images: &[Image]) -> Result<Vec<ScatteringCoeffs>> {
        let cfg = self.config.scatter_config();
        self.in_pool(|| scatter_images(images, &self.bank, &cfg))
    }

    pub fn lambda_now(&self) -> f64 {
        self.weights.lambda(self.epoch, self.step)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.config.max_steps.is_some_and(|m| self.step >= m)
    }

    /// Sample order for the current epoch.
    pub fn epoch_order(&self, len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut stream_rng(self.config.seed, Stream::Shuffle, &[self.epoch as u64]));
        order
    }

    /// One optimizer step on the samples `batch`.
    pub fn train_step(&mut self, data: &dyn ImageSource, batch: &[usize]) -> Result<StepRecord> {
        ensure!(batch.len() >= 2, "a step needs at least two samples");
        let (seed, epoch) = (self.config.seed, self.epoch as u64);
        let views = &self.views;
        let records = self.in_pool(|| {
            batch
                .par_iter()
                .map(|&i| {
                    let img = data.get(i)?;
                    views.make_views(&img, &mut stream_rng(seed, Stream::Augment, &[epoch, i as u64]))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut images = Vec::with_capacity(2 * batch.len());
        let mut labels = Vec::with_capacity(2 * batch.len());
        for (a, b) in records {
            labels.push(a.pretext_label);
            labels.push(b.pretext_label);
            images.push(a.view);
            images.push(b.view);
        }
        let coeffs = self.scatter(&images)?;
        let features = self.model.adapter.prepare(&coeffs)?;

        let lambda = self.lambda_now();
        let mut g = Graph::new();
        let x = g.input(features);
        let out = self.model.adapter.forward(&mut g, x, Mode::Train)?;
        let z = self.model.projection.forward(&mut g, out.h)?;
        let c = nt_xent(&mut g, z, self.config.temperature)?;
        let mut p = None;
        let mut accuracy = None;
        if let Some(head) = &self.model.pretext {
            let labels: Vec<usize> = labels
                .iter()
                .map(|l| l.ok_or_else(|| Error::Contract("view without a pretext label".into())))
                .collect::<Result<_>>()?;
            let mut rng = stream_rng(seed, Stream::Dropout, &[self.step as u64]);
            let ho = head.forward(&mut g, out.h, Mode::Train, &mut rng)?;
            let targets = one_hot(&labels, head.classes)?;
            let loss = match self.config.pretext_views {
                PretextViews::Both => pretext_loss(&mut g, ho.logits, &targets)?,
                PretextViews::Single => {
                    let mut masked = targets;
                    let k = head.classes;
                    for r in (1..labels.len()).step_by(2) {
                        masked.data_mut()[r * k..(r + 1) * k].fill(0.0);
                    }
                    let ce = g.cross_entropy(ho.logits, masked, false)?;
                    g.scale(ce, 2.0)
                }
            };
            let probs = g.value(ho.probs);
            let hits = labels
                .iter()
                .enumerate()
                .filter(|(r, &l)| {
                    let row = probs.row(*r);
                    let arg = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                    arg == l
                })
                .count();
            accuracy = Some(hits as f64 / labels.len() as f64);
            p = Some(loss);
        }
        let total = total_loss(&mut g, c, p, lambda)?;

        let c_val = g.value(c).item();
        let p_val = p.map(|v| g.value(v).item());
        if !c_val.is_finite() || p_val.is_some_and(|v| !v.is_finite()) {
            return Err(self.non_finite(format!(
                "loss became non-finite at epoch {} step {}: contrastive={c_val} pretext={p_val:?}",
                self.epoch, self.step
            )));
        }
        let grads = g.backward(total)?;
        if let Some(name) = grads.first_non_finite() {
            return Err(self.non_finite(format!(
                "gradient of {name} became non-finite at epoch {} step {}",
                self.epoch, self.step
            )));
        }
        for set in self.model.param_sets_mut() {
            set.zero_grad();
            set.accumulate(&grads)?;
        }
        self.optimizer.step(&mut self.model.param_sets_mut())?;
        for set in self.model.param_sets_mut() {
            set.zero_grad();
        }
        self.model.adapter.update_running_stats(&out.bn_stats)?;
        if let Some(pv) = p_val {
            self.weights.observe(c_val, pv);
        }
        self.step += 1;
        let rec = StepRecord {
            epoch: self.epoch,
            step: self.step,
            contrastive: c_val,
            pretext: p_val,
            lambda,
            pretext_accuracy: accuracy,
        };
        self.steps.push(rec.clone());
        Ok(rec)
    }

    fn non_finite(&self, message: String) -> Error {
        if let Some(dir) = &self.diagnostic_dir {
            let path = dir.join("diagnostic.ckpt");
            match self.checkpoint().save(&path) {
                Ok(()) => log::error!("{message}; state saved to {}", path.display()),
                Err(e) => log::error!("{message}; could not save diagnostic state: {e}"),
            }
        }
        Error::NonFinite(message)
    }

    /// Runs the full batches of the current epoch (or until `max_steps`).
    pub fn train_epoch(&mut self, data: &dyn ImageSource) -> Result<EpochMetrics> {
        let order = self.epoch_order(data.len());
        let lambda = self.lambda_now();
        let (mut c_sum, mut p_sum, mut n) = (0.0, 0.0, 0usize);
        let mut has_p = false;
        for batch in order.chunks_exact(self.config.batch_size) {
            if self.config.max_steps.is_some_and(|m| self.step >= m) {
                break;
            }
            let rec = self.train_step(data, batch)?;
            c_sum += rec.contrastive;
            if let Some(p) = rec.pretext {
                p_sum += p;
                has_p = true;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        let m = EpochMetrics {
            epoch: self.epoch,
            contrastive_loss: c_sum / n,
            pretext_loss: has_p.then(|| p_sum / n),
            lambda,
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        self.epochs.push(m.clone());
        Ok(m)
    }

    /// Trains until the configured epoch or step budget is spent. With an
    /// output directory, writes `config.toml`, `metrics.csv` and
    /// `checkpoint.ckpt` there.
    pub fn run(&mut self, data: &dyn ImageSource, out: Option<&Path>) -> Result<()> {
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            self.config.save(&dir.join("config.toml"))?;
            self.diagnostic_dir = Some(dir.to_path_buf());
        }
        let metrics_path = out.map(|d| d.join("metrics.csv"));
        if let Some(p) = &metrics_path {
            if !p.exists() || self.epoch == 0 {
                let mut w = csv::Writer::from_path(p).map_err(|e| Error::Format(e.to_string()))?;
                w.write_record(METRICS_HEADER).map_err(|e| Error::Format(e.to_string()))?;
                w.flush().map_err(|e| Error::io(p, e))?;
            }
        }
        while !self.finished() {
            let m = self.train_epoch(data)?;
            log::info!(
                "epoch {} contrastive {:.5} pretext {} lambda {}",
                m.epoch,
                m.contrastive_loss,
                m.pretext_loss.map_or("-".into(), |p| format!("{p:.5}")),
                m.lambda
            );
            if let Some(p) = &metrics_path {
                append_metrics(p, &m)?;
            }
            if let Some(dir) = out {
                let every = self.config.checkpoint_every;
                if every > 0 && self.epoch % every == 0 {
                    self.checkpoint().save(&dir.join(format!("epoch{:04}.ckpt", self.epoch)))?;
                }
            }
        }
        if let Some(dir) = out {
            self.checkpoint().save(&dir.join("checkpoint.ckpt"))?;
        }
        Ok(())
    }
}

fn append_metrics(path: &Path, m: &EpochMetrics) -> Result<()> {
    let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        m.epoch.to_string(),
        format!("{}", m.contrastive_loss),
        m.pretext_loss.map(|p| format!("{p}")).unwrap_or_default(),
        format!("{}", m.lambda),
        format!("{:.3}", m.wall_time),
    ])
    .map_err(|e| Error::Format(e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pooled-and-standardized adapter input for images, in eval mode.
pub fn embed_images(adapter: &Adapter, bank: &FilterBank, cfg: &ScatterConfig, images: &[Image]) -> Result<Tensor> {
    let coeffs = scatter_images(images, bank, cfg)?;
    adapter.embed(&coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugPolicy;
    use crate::datasets::{synth_dataset, SynthKind};
    use crate::losses::LambdaSchedule;

    fn tiny(pretext: PretextTask) -> TrainConfig {
        let mut cfg = TrainConfig::desk();
        cfg.image_size = 16;
        cfg.orientations = 4;
        cfg.batch_size = 4;
        cfg.epochs = 2;
        cfg.pretext = pretext;
        cfg.jigsaw_classes = 6;
        cfg.adapter.hidden_dim = 16;
        cfg.adapter.repr_dim = 16;
        cfg.heads.head_hidden = 16;
        cfg.heads.proj_dim = 8;
        cfg.augment = AugPolicy::default();
        cfg
    }

    #[test]
    fn pretext_none_has_no_head_and_no_loss() {
        let data = synth_dataset(SynthKind::Noise, 8, 0, 16).unwrap();
        let mut t = Trainer::new(tiny(PretextTask::None), &data).unwrap();
        assert!(t.model.pretext.is_none());
        t.run(&data, None).unwrap();
        assert_eq!(t.steps.len(), 4);
        assert!(t.steps.iter().all(|s| s.pretext.is_none()));
        assert!(t.epochs.iter().all(|e| e.pretext_loss.is_none()));
    }

    #[test]
    fn jigsaw_and_single_view_modes_train() {
        let data = synth_dataset(SynthKind::OrientedTextures, 8, 1, 18).unwrap();
        let mut cfg = tiny(PretextTask::Jigsaw);
        cfg.image_size = 32;
        cfg.pretext_views = PretextViews::Single;
        cfg.lambda = LambdaSchedule::Constant { value: 0.5 };
        let mut t = Trainer::new(cfg, &data).unwrap();
        let rec = t.train_step(&data, &[0, 1, 2, 3]).unwrap();
        assert!(rec.pretext.unwrap().is_finite());
    }

    #[test]
    fn zero_lambda_freezes_pretext_head() {
        let data = synth_dataset(SynthKind::Noise, 8, 2, 16).unwrap();
        let mut cfg = tiny(PretextTask::Rotation);
        cfg.lambda = LambdaSchedule::Constant { value: 0.0 };
        let mut t = Trainer::new(cfg, &data).unwrap();
        let before = t.model.pretext.as_ref().unwrap().params.fingerprint();
        let adapter_before = t.model.adapter.params.fingerprint();
        t.run(&data, None).unwrap();
        assert_eq!(t.model.pretext.as_ref().unwrap().params.fingerprint(), before);
        assert_ne!(t.model.adapter.params.fingerprint(), adapter_before);
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let data = synth_dataset(SynthKind::Noise, 8, 3, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(PretextTask::Rotation);
        let mut full = Trainer::new(cfg.clone(), &data).unwrap();
        full.run(&data, Some(dir.path())).unwrap();
        let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(text.starts_with("epoch,contrastive_loss,pretext_loss,lambda,wall_time"));
        assert_eq!(text.lines().count(), 3);

        let mut half = Trainer::new(TrainConfig { epochs: 1, ..cfg }, &data).unwrap();
        half.run(&data, None).unwrap();
        let bytes = half.checkpoint().to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck.to_bytes().unwrap(), bytes);
        let mut resumed = Trainer::from_checkpoint(&ck).unwrap();
        resumed.config.epochs = 2;
        resumed.run(&data, None).unwrap();
        let tail: Vec<f64> = full.steps[2..].iter().map(|s| s.contrastive).collect();
        let again: Vec<f64> = resumed.steps.iter().map(|s| s.contrastive).collect();
        assert_eq!(tail, again);
        assert_eq!(resumed.model, full.model);
    }
}
