//! Stochastic view generation for contrastive training, plus the labeled
//! pretext transforms (quarter-turn rotation, jigsaw).
//!
//! Sampling and application are split: [`ViewGenerator::sample`] draws every
//! random parameter into an [`AugParams`], and [`ViewGenerator::apply`] is a pure
//! function of the input and those parameters. Re-applying a recorded `AugParams`
//! reproduces the view bit for bit.

pub mod jigsaw;
pub mod lanczos;
pub mod ops;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::Image;
use jigsaw::JigsawTable;
use ops::{AffineParams, BlurParams, CropBox, JitterOp, JitterParams};

pub use lanczos::lanczos_resize;
pub use ops::rotate90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Crop,
    Hflip,
    ColorJitter,
    Grayscale,
    GaussianBlur,
    Affine,
}

impl AugKind {
    pub const ALL: [AugKind; 6] = [
        AugKind::Crop,
        AugKind::Hflip,
        AugKind::ColorJitter,
        AugKind::Grayscale,
        AugKind::GaussianBlur,
        AugKind::Affine,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AugKind::Crop => "crop",
            AugKind::Hflip => "hflip",
            AugKind::ColorJitter => "color_jitter",
            AugKind::Grayscale => "grayscale",
            AugKind::GaussianBlur => "gaussian_blur",
            AugKind::Affine => "affine",
        }
    }
}

impl FromStr for AugKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        AugKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "color" && *k == AugKind::ColorJitter) || (norm == "blur" && *k == AugKind::GaussianBlur) || (norm == "flip" && *k == AugKind::Hflip))
            .ok_or_else(|| Error::Config(format!("unknown augmentation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugPolicy {
    pub enabled: BTreeSet<AugKind>,
    /// Fraction of the image area kept by the random crop.
    pub crop_scale: (f64, f64),
    pub crop_ratio: (f64, f64),
    pub hflip_prob: f64,
    pub jitter_prob: f64,
    /// Brightness, contrast and saturation vary by `0.8·s`, hue by `0.2·s`.
    pub jitter_strength: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    /// Blur kernel width as a fraction of the image side.
    pub blur_kernel_frac: f64,
    pub affine_degrees: f64,
    pub affine_translate: f64,
    pub affine_scale: (f64, f64),
    pub affine_shear: f64,
}

impl Default for AugPolicy {
    /// The training default: the baseline set without affine warps.
    fn default() -> Self {
        let mut p = Self::baseline();
        p.enabled.remove(&AugKind::Affine);
        p
    }
}

impl AugPolicy {
    /// All six augmentations.
    pub fn baseline() -> Self {
        Self {
            enabled: AugKind::ALL.into_iter().collect(),
            crop_scale: (0.08, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            hflip_prob: 0.5,
            jitter_prob: 0.8,
            jitter_strength: 0.5,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
            blur_kernel_frac: 0.1,
            affine_degrees: 15.0,
            affine_translate: 0.1,
            affine_scale: (0.9, 1.1),
            affine_shear: 10.0,
        }
    }

    pub fn none() -> Self {
        Self {
            enabled: BTreeSet::new(),
            ..Self::baseline()
        }
    }

    pub fn only(kinds: &[AugKind]) -> Self {
        Self {
            enabled: kinds.iter().copied().collect(),
            ..Self::baseline()
        }
    }

    pub fn is_enabled(&self, kind: AugKind) -> bool {
        self.enabled.contains(&kind)
    }

    /// Parses a policy string: a comma list of `baseline`, `default`, `none`,
    /// `crop-color`, augmentation names to add, and `-name` to remove.
    /// `baseline,-affine,-hflip` is the baseline without affine and flips.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut policy = Self::none();
        for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "baseline" | "all" => policy.enabled = Self::baseline().enabled,
                "default" => policy.enabled = Self::default().enabled,
                "none" => policy.enabled.clear(),
                "crop-color" => {
                    policy.enabled.insert(AugKind::Crop);
                    policy.enabled.insert(AugKind::ColorJitter);
                }
                t if t.starts_with('-') => {
                    policy.enabled.remove(&t[1..].parse()?);
                }
                t => {
                    policy.enabled.insert(t.parse()?);
                }
            }
        }
        Ok(policy)
    }

    pub fn describe(&self) -> String {
        if self.enabled.is_empty() {
            return "none".into();
        }
        self.enabled.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretextTask {
    #[default]
    Rotation,
    Jigsaw,
    None,
}

impl PretextTask {
    pub fn classes(&self, table: Option<&JigsawTable>) -> usize {
        match self {
            PretextTask::Rotation => 4,
            PretextTask::Jigsaw => table.map_or(jigsaw::DEFAULT_CLASSES, |t| t.len()),
            PretextTask::None => 0,
        }
    }
}

impl FromStr for PretextTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rotation" => Ok(PretextTask::Rotation),
            "jigsaw" => Ok(PretextTask::Jigsaw),
            "none" => Ok(PretextTask::None),
            other => Err(Error::Config(format!("unknown pretext task `{other}`"))),
        }
    }
}

impl fmt::Display for PretextTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PretextTask::Rotation => "rotation",
            PretextTask::Jigsaw => "jigsaw",
            PretextTask::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretextParams {
    /// Counter-clockwise quarter turns.
    Rotation(usize),
    /// Index into the jigsaw table.
    Jigsaw(usize),
}

impl PretextParams {
    pub fn label(&self) -> usize {
        match *self {
            PretextParams::Rotation(k) | PretextParams::Jigsaw(k) => k,
        }
    }
}

/// Every parameter sampled for one view (the transform's `t`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugParams {
    pub crop: Option<CropBox>,
    pub hflip: bool,
    pub affine: Option<AffineParams>,
    pub jitter: Option<JitterParams>,
    pub grayscale: bool,
    pub blur: Option<BlurParams>,
    pub pretext: Option<PretextParams>,
}

impl AugParams {
    /// Multi-line human-readable dump.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k}: {v}\n"));
        line("crop", format!("{:?}", self.crop));
        line("hflip", self.hflip.to_string());
        line("affine", format!("{:?}", self.affine));
        line("color_jitter", format!("{:?}", self.jitter));
        line("grayscale", self.grayscale.to_string());
        line("gaussian_blur", format!("{:?}", self.blur));
        line("pretext", format!("{:?}", self.pretext));
        s
    }
}

/// An augmented view together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AugRecord {
    pub view: Image,
    pub params: AugParams,
    /// Present iff a pretext transform was applied.
    pub pretext_label: Option<usize>,
}

/// Draws and applies view transforms under one policy and pretext task.
#[derive(Debug, Clone)]
pub struct ViewGenerator {
    pub policy: AugPolicy,
    pub pretext: PretextTask,
    pub jigsaw: Option<JigsawTable>,
}

impl ViewGenerator {
    pub fn new(policy: AugPolicy) -> Self {
        Self {
            policy,
            pretext: PretextTask::None,
            jigsaw: None,
        }
    }

    pub fn with_pretext(mut self, task: PretextTask, table: Option<JigsawTable>) -> Self {
        self.pretext = task;
        self.jigsaw = table;
        self
    }

    fn sample_crop(&self, h: usize, w: usize, rng: &mut impl Rng) -> CropBox {
        let area = (h * w) as f64;
        let (lo, hi) = self.policy.crop_scale;
        let (rlo, rhi) = (self.policy.crop_ratio.0.ln(), self.policy.crop_ratio.1.ln());
        for _ in 0..10 {
            let target = area * rng.random_range(lo..=hi);
            let ratio = rng.random_range(rlo..=rhi).exp();
            let cw = (target * ratio).sqrt().round() as usize;
            let ch = (target / ratio).sqrt().round() as usize;
            if cw > 0 && ch > 0 && cw <= w && ch <= h {
                return CropBox {
                    top: rng.random_range(0..=h - ch),
                    left: rng.random_range(0..=w - cw),
                    height: ch,
                    width: cw,
                };
            }
        }
        CropBox {
            top: 0,
            left: 0,
            height: h,
            width: w,
        }
    }

    /// Draws a full parameter record for an `h×w` input.
    pub fn sample(&self, h: usize, w: usize, rng: &mut impl Rng) -> Result<AugParams> {
        let p = &self.policy;
        let mut t = AugParams::default();
        if p.is_enabled(AugKind::Crop) {
            t.crop = Some(self.sample_crop(h, w, rng));
        }
        if p.is_enabled(AugKind::Hflip) {
            t.hflip = rng.random_bool(p.hflip_prob);
        }
        if p.is_enabled(AugKind::Affine) {
            let tmax = p.affine_translate * w.max(h) as f64;
            t.affine = Some(AffineParams {
                angle: rng.random_range(-p.affine_degrees..=p.affine_degrees),
                translate: (
                    rng.random_range(-tmax..=tmax).round(),
                    rng.random_range(-tmax..=tmax).round(),
                ),
                scale: rng.random_range(p.affine_scale.0..=p.affine_scale.1),
                shear: rng.random_range(-p.affine_shear..=p.affine_shear),
            });
        }
        if p.is_enabled(AugKind::ColorJitter) && rng.random_bool(p.jitter_prob) {
            let s = p.jitter_strength;
            let factor = |rng: &mut dyn rand::RngCore, amount: f64| {
                rng.random_range((1.0 - amount).max(0.0)..=1.0 + amount)
            };
            let mut order = [JitterOp::Brightness, JitterOp::Contrast, JitterOp::Saturation, JitterOp::Hue];
            order.shuffle(rng);
            t.jitter = Some(JitterParams {
                brightness: factor(rng, 0.8 * s),
                contrast: factor(rng, 0.8 * s),
                saturation: factor(rng, 0.8 * s),
                hue: rng.random_range(-0.2 * s..=0.2 * s),
                order,
            });
        }
        if p.is_enabled(AugKind::Grayscale) {
            t.grayscale = rng.random_bool(p.grayscale_prob);
        }
        if p.is_enabled(AugKind::GaussianBlur) && rng.random_bool(p.blur_prob) {
            let k = ((p.blur_kernel_frac * h.min(w) as f64) as usize).max(3) | 1;
            t.blur = Some(BlurParams {
                sigma: rng.random_range(p.blur_sigma.0..=p.blur_sigma.1),
                kernel: k,
            });
        }
        t.pretext = match self.pretext {
            PretextTask::None => None,
            PretextTask::Rotation => Some(PretextParams::Rotation(rng.random_range(0..4))),
            PretextTask::Jigsaw => {
                let classes = self.pretext.classes(self.jigsaw.as_ref());
                Some(PretextParams::Jigsaw(rng.random_range(0..classes)))
            }
        };
        Ok(t)
    }

    /// Applies recorded parameters. Output has the input's size.
    pub fn apply(&self, x: &Image, t: &AugParams) -> Result<Image> {
        ensure!(!x.is_empty(), "cannot augment an empty image");
        let (h, w) = (x.height(), x.width());
        let mut v = match &t.crop {
            Some(b) => ops::resized_crop(x, b, h, w)?,
            None => x.clone(),
        };
        if t.hflip {
            v = ops::hflip(&v);
        }
        if let Some(a) = &t.affine {
            v = ops::affine(&v, a);
        }
        if let Some(j) = &t.jitter {
            v = ops::color_jitter(&v, j);
        }
        if t.grayscale {
            v = ops::grayscale(&v);
        }
        if let Some(b) = &t.blur {
            v = ops::gaussian_blur(&v, b);
        }
        match t.pretext {
            None => {}
            Some(PretextParams::Rotation(k)) => v = ops::rotate90(&v, k)?,
            Some(PretextParams::Jigsaw(idx)) => {
                let table = self
                    .jigsaw
                    .as_ref()
                    .ok_or_else(|| Error::Contract("jigsaw pretext without a table".into()))?;
                ensure!(v.is_square(), "jigsaw needs a square view");
                let side = v.height();
                let tile = side.div_ceil(3);
                let fitted = if side % 3 == 0 { v } else { lanczos_resize(&v, 3 * tile, 3 * tile)? };
                let mixed = jigsaw::jigsaw(&fitted, idx, table, tile)?;
                v = if mixed.height() == side { mixed } else { lanczos_resize(&mixed, side, side)? };
            }
        }
        Ok(v)
    }

    pub fn view(&self, x: &Image, rng: &mut impl Rng) -> Result<AugRecord> {
        ensure!(!x.is_empty(), "cannot augment an empty image");
        let params = self.sample(x.height(), x.width(), rng)?;
        let view = self.apply(x, &params)?;
        Ok(AugRecord {
            view,
            pretext_label: params.pretext.map(|p| p.label()),
            params,
        })
    }

    /// Two independently sampled views of `x`.
    pub fn make_views(&self, x: &Image, rng: &mut impl Rng) -> Result<(AugRecord, AugRecord)> {
        Ok((self.view(x, rng)?, self.view(x, rng)?))
    }
}

/// Two views of `x` under `policy` without a pretext transform.
pub fn make_views(x: &Image, policy: &AugPolicy, rng: &mut impl Rng) -> Result<(AugRecord, AugRecord)> {
    ViewGenerator::new(policy.clone()).make_views(x, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn picture() -> Image {
        Image::from_fn(3, 24, 24, |c, y, x| {
            (0.5 + 0.3 * ((x as f32 * 0.4 + c as f32).sin() * (y as f32 * 0.25).cos())).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn empty_policy_returns_input() {
        let x = picture();
        let mut rng = stream_rng(1, Stream::Augment, &[]);
        let (a, b) = make_views(&x, &AugPolicy::none(), &mut rng).unwrap();
        assert_eq!(a.view, x);
        assert_eq!(b.view, x);
        assert!(a.pretext_label.is_none());
    }

    #[test]
    fn same_seed_same_views() {
        let x = picture();
        let g = ViewGenerator::new(AugPolicy::baseline()).with_pretext(PretextTask::Rotation, None);
        let a = g.make_views(&x, &mut stream_rng(9, Stream::Augment, &[3])).unwrap();
        let b = g.make_views(&x, &mut stream_rng(9, Stream::Augment, &[3])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_flip() {
        let x = picture();
        let mut policy = AugPolicy::only(&[AugKind::Hflip]);
        policy.hflip_prob = 1.0;
        let (a, _) = make_views(&x, &policy, &mut stream_rng(0, Stream::Augment, &[])).unwrap();
        assert_eq!(a.view, ops::hflip(&x));
    }

    #[test]
    fn recorded_params_reproduce_view() {
        let x = picture();
        let table = JigsawTable::build(5, 2).unwrap();
        for task in [PretextTask::Rotation, PretextTask::Jigsaw, PretextTask::None] {
            let g = ViewGenerator::new(AugPolicy::baseline()).with_pretext(task, Some(table.clone()));
            for i in 0..20 {
                let rec = g.view(&x, &mut stream_rng(4, Stream::Augment, &[i])).unwrap();
                assert_eq!(g.apply(&x, &rec.params).unwrap(), rec.view);
                assert_eq!(rec.pretext_label.is_some(), task != PretextTask::None);
                assert_eq!((rec.view.height(), rec.view.width()), (24, 24));
            }
        }
    }

    #[test]
    fn parse_policies() {
        assert_eq!(AugPolicy::parse("baseline").unwrap().enabled.len(), 6);
        assert_eq!(AugPolicy::parse("default").unwrap(), AugPolicy::default());
        let p = AugPolicy::parse("baseline,-affine,-hflip").unwrap();
        assert!(!p.is_enabled(AugKind::Affine) && !p.is_enabled(AugKind::Hflip));
        assert_eq!(p.enabled.len(), 4);
        let p = AugPolicy::parse("crop-color").unwrap();
        assert_eq!(p.describe(), "crop,color_jitter");
        assert!(AugPolicy::parse("solarize").is_err());
    }

    #[test]
    fn crops_never_degenerate() {
        let g = ViewGenerator::new(AugPolicy::only(&[AugKind::Crop]));
        for i in 0..200 {
            let t = g.sample(7, 5, &mut stream_rng(1, Stream::Augment, &[i])).unwrap();
            let b = t.crop.unwrap();
            assert!(b.height > 0 && b.width > 0 && b.top + b.height <= 7 && b.left + b.width <= 5);
        }
    }

    #[test]
    fn empty_image_rejected() {
        let g = ViewGenerator::new(AugPolicy::none());
        assert!(g.make_views(&Image::zeros(3, 0, 0), &mut stream_rng(0, Stream::Augment, &[])).is_err());
    }
}
