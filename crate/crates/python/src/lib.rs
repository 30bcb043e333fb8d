//! Python bindings: filter banks, scattering, the contrastive loss, training
//! and linear evaluation. Images cross the boundary as flat planar `float`
//! lists with explicit `(channels, height, width)`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use scatclr_core::augment::{AugPolicy, ViewGenerator};
use scatclr_core::datasets::{load_dataset, synth_dataset, ImageSource, SynthKind};
use scatclr_core::eval::{self, Encoder, ProbeConfig};
use scatclr_core::filterbank::{dump_filters, FilterBank, FilterBankConfig};
use scatclr_core::image::Image;
use scatclr_core::losses;
use scatclr_core::rng::{stream_rng, Stream};
use scatclr_core::scattering::{self, ScatterConfig};
use scatclr_core::tensornet::Tensor;
use scatclr_core::trainer::{Checkpoint, TrainConfig, Trainer};
use scatclr_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::ParamShape { .. } | Error::MissingParam(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn image_from(pixels: Vec<f32>, channels: usize, height: usize, width: usize) -> PyResult<Image> {
    Image::from_planar(channels, height, width, pixels).map_err(to_py)
}

/// Per-plane channel count for `scales`, `orientations` and `order`.
#[pyfunction]
#[pyo3(signature = (scales, orientations, order = 2))]
fn channel_count(scales: usize, orientations: usize, order: usize) -> usize {
    scattering::channel_count(scales, orientations, order)
}

/// Contrastive loss of unit-norm embeddings whose rows `2k` and `2k+1` are positive pairs.
#[pyfunction]
#[pyo3(signature = (z, temperature = 0.5))]
fn nt_xent(z: Vec<Vec<f64>>, temperature: f64) -> PyResult<f64> {
    let t = Tensor::from_rows(&z).map_err(to_py)?;
    losses::nt_xent_value(&t, temperature).map_err(to_py)
}

/// Morlet filter bank on a square grid.
#[pyclass(name = "FilterBank", module = "scatclr", frozen)]
struct PyFilterBank {
    inner: FilterBank,
}

#[pymethods]
impl PyFilterBank {
    #[new]
    fn new(scales: usize, orientations: usize, size: usize) -> PyResult<Self> {
        let inner = FilterBank::build(FilterBankConfig::new(scales, orientations, size)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    #[getter]
    fn num_bandpass(&self) -> usize {
        self.inner.bandpass().len()
    }

    fn littlewood_paley_max(&self) -> f64 {
        self.inner.littlewood_paley_max()
    }

    /// Writes filter PNGs, a mosaic and a manifest; returns the number of filter images.
    fn dump(&self, dir: PathBuf) -> PyResult<usize> {
        Ok(dump_filters(&self.inner, &dir).map_err(to_py)?.filter_images.len())
    }

    /// Scattering coefficients of an RGB image as `(channels, height, width, data)`.
    #[pyo3(signature = (pixels, height, width, order = 2))]
    fn scatter(&self, py: Python<'_>, pixels: Vec<f32>, height: usize, width: usize, order: usize) -> PyResult<(usize, usize, usize, Vec<f64>)> {
        let img = image_from(pixels, 3, height, width)?;
        let cfg = self.inner.config();
        let scfg = ScatterConfig {
            order,
            ..ScatterConfig::new(cfg.scales, cfg.orientations)
        };
        let coeffs = py
            .detach(|| scattering::scatter_color(&img, &self.inner, &scfg))
            .map_err(to_py)?;
        let (c, h, w) = coeffs.shape();
        Ok((c, h, w, coeffs.data().to_vec()))
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!("FilterBank(scales={}, orientations={}, size={})", c.scales, c.orientations, c.size)
    }
}

/// Two augmented views of an image, each returned as `(pixels, height, width, description)`.
#[pyfunction]
#[pyo3(signature = (pixels, channels, height, width, policy = "default", seed = 0))]
fn augment_views(
    pixels: Vec<f32>,
    channels: usize,
    height: usize,
    width: usize,
    policy: &str,
    seed: u64,
) -> PyResult<Vec<(Vec<f32>, usize, usize, String)>> {
    let img = image_from(pixels, channels, height, width)?;
    let generator = ViewGenerator::new(AugPolicy::parse(policy).map_err(to_py)?);
    let (a, b) = generator
        .make_views(&img, &mut stream_rng(seed, Stream::Augment, &[0, 0]))
        .map_err(to_py)?;
    Ok([a, b]
        .into_iter()
        .map(|r| {
            let (h, w) = (r.view.height(), r.view.width());
            (r.view.into_data(), h, w, r.params.describe())
        })
        .collect())
}

/// Labeled synthetic images as `(pixels, label)` pairs, RGB planar.
#[pyfunction]
#[pyo3(signature = (kind, count, seed = 0, size = 32))]
fn synth_images(kind: &str, count: usize, seed: u64, size: usize) -> PyResult<Vec<(Vec<f32>, Option<usize>)>> {
    let kind: SynthKind = kind.parse().map_err(to_py)?;
    let ds = synth_dataset(kind, count, seed, size).map_err(to_py)?;
    Ok(ds.images.into_iter().zip(ds.labels).map(|(im, l)| (im.into_data(), l)).collect())
}

/// Default training settings as TOML; `desk=True` gives the small preset.
#[pyfunction]
#[pyo3(signature = (desk = false))]
fn default_config(desk: bool) -> PyResult<String> {
    let cfg = if desk { TrainConfig::desk() } else { TrainConfig::default() };
    cfg.to_toml().map_err(to_py)
}

/// A training run bound to one dataset.
#[pyclass(name = "Trainer", module = "scatclr")]
struct PyTrainer {
    trainer: Trainer,
    data: Box<dyn ImageSource>,
}

#[pymethods]
impl PyTrainer {
    /// Trains on a generated set: `oriented-textures`, `two-blob-separable` or `noise`.
    #[staticmethod]
    #[pyo3(signature = (kind, count, config = None))]
    fn synthetic(py: Python<'_>, kind: &str, count: usize, config: Option<&str>) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let kind: SynthKind = kind.parse().map_err(to_py)?;
        let data = synth_dataset(kind, count, cfg.seed, cfg.image_size).map_err(to_py)?;
        let trainer = py.detach(|| Trainer::new(cfg, &data)).map_err(to_py)?;
        Ok(Self { trainer, data: Box::new(data) })
    }

    /// Trains on an image folder.
    #[staticmethod]
    #[pyo3(signature = (path, config = None))]
    fn folder(py: Python<'_>, path: PathBuf, config: Option<&str>) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let (data, _) = load_dataset(&path, Some(cfg.image_size)).map_err(to_py)?;
        let trainer = py.detach(|| Trainer::new(cfg, &data)).map_err(to_py)?;
        Ok(Self { trainer, data: Box::new(data) })
    }

    /// Runs one epoch; returns `(contrastive_loss, pretext_loss)` averaged over its steps.
    fn train_epoch(&mut self, py: Python<'_>) -> PyResult<(f64, Option<f64>)> {
        let Self { trainer, data } = self;
        let m = py.detach(|| trainer.train_epoch(data.as_ref())).map_err(to_py)?;
        Ok((m.contrastive_loss, m.pretext_loss))
    }

    /// Trains until the configured epochs or step budget, writing outputs to `out` if given.
    #[pyo3(signature = (out = None))]
    fn run(&mut self, py: Python<'_>, out: Option<PathBuf>) -> PyResult<()> {
        let Self { trainer, data } = self;
        py.detach(|| trainer.run(data.as_ref(), out.as_deref())).map_err(to_py)
    }

    /// Contrastive loss of every step taken so far.
    fn contrastive_losses(&self) -> Vec<f64> {
        self.trainer.steps.iter().map(|s| s.contrastive).collect()
    }

    #[getter]
    fn step(&self) -> usize {
        self.trainer.step
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.trainer.epoch
    }

    /// `(name, count)` trainable parameter totals, ending with the overall total.
    fn param_report(&self) -> Vec<(String, usize)> {
        self.trainer.model.param_report()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.trainer.checkpoint().save(&path).map_err(to_py)
    }

    /// Top-1 accuracy of linear probes on the training data, one per run.
    #[pyo3(signature = (runs = 1, steps = 500))]
    fn linear_eval(&self, py: Python<'_>, runs: usize, steps: usize) -> PyResult<Vec<f64>> {
        let encoder = Encoder::from_trainer(&self.trainer);
        let probe = ProbeConfig { steps, ..ProbeConfig::default() };
        let results = py
            .detach(|| eval::linear_eval(&encoder, self.data.as_ref(), &probe, runs))
            .map_err(to_py)?;
        Ok(results.iter().map(|r| r.test_accuracy).collect())
    }
}

fn parse_config(text: Option<&str>) -> PyResult<TrainConfig> {
    let cfg = match text {
        Some(t) => TrainConfig::from_toml(t).map_err(to_py)?,
        None => TrainConfig::desk(),
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Probes a saved checkpoint on a labeled folder; returns the per-run accuracies.
#[pyfunction]
#[pyo3(signature = (checkpoint, data, runs = 5, steps = 500))]
fn linear_eval(py: Python<'_>, checkpoint: PathBuf, data: PathBuf, runs: usize, steps: usize) -> PyResult<Vec<f64>> {
    let ckpt = Checkpoint::load(&checkpoint).map_err(to_py)?;
    let encoder = Encoder::from_checkpoint(&ckpt).map_err(to_py)?;
    let (ds, _) = load_dataset(&data, Some(ckpt.config.image_size)).map_err(to_py)?;
    let probe = ProbeConfig { steps, ..ProbeConfig::default() };
    let results = py.detach(|| eval::linear_eval(&encoder, &ds, &probe, runs)).map_err(to_py)?;
    Ok(results.iter().map(|r| r.test_accuracy).collect())
}

#[pymodule(name = "scatclr")]
pub fn scatclr_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyFilterBank>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(channel_count, m)?)?;
    m.add_function(wrap_pyfunction!(nt_xent, m)?)?;
    m.add_function(wrap_pyfunction!(augment_views, m)?)?;
    m.add_function(wrap_pyfunction!(synth_images, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(linear_eval, m)?)?;
    Ok(())
}
