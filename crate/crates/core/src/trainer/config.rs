use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::OptimConfig;
use crate::augment::{jigsaw, AugPolicy, PretextTask};
use crate::error::{Error, Result};
use crate::losses::{LambdaSchedule, DEFAULT_TEMPERATURE};
use crate::network::{AdapterConfig, HeadsConfig};
use crate::scattering::{PadPolicy, ScatterConfig};

/// Which views feed the pretext head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretextViews {
    #[default]
    Both,
    /// Only the first view of each pair contributes to the pretext loss.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples per batch `N`; each contributes two views.
    pub batch_size: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Side of the square grid the scattering transform runs on.
    pub image_size: usize,
    pub pad_policy: PadPolicy,
    pub scales: usize,
    pub orientations: usize,
    pub order: usize,
    pub adapter: AdapterConfig,
    pub heads: HeadsConfig,
    pub pretext: PretextTask,
    pub pretext_views: PretextViews,
    pub jigsaw_classes: usize,
    pub temperature: f64,
    pub lambda: LambdaSchedule,
    pub optimizer: OptimConfig,
    pub augment: AugPolicy,
    /// Images used to estimate standardization statistics.
    pub standardize_samples: usize,
    /// Worker threads for augmentation and scattering; 0 uses all cores.
    pub workers: usize,
    /// Save a checkpoint every this many epochs (0 disables periodic saves).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            max_steps: None,
            seed: 0,
            image_size: 128,
            pad_policy: PadPolicy::default(),
            scales: 2,
            orientations: 16,
            order: 2,
            adapter: AdapterConfig::default(),
            heads: HeadsConfig::default(),
            pretext: PretextTask::Rotation,
            pretext_views: PretextViews::Both,
            jigsaw_classes: jigsaw::DEFAULT_CLASSES,
            temperature: DEFAULT_TEMPERATURE,
            lambda: LambdaSchedule::default(),
            optimizer: OptimConfig::default(),
            augment: AugPolicy::default(),
            standardize_samples: 512,
            workers: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Small settings for desk-scale runs and tests.
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            image_size: 32,
            orientations: 8,
            adapter: AdapterConfig {
                block_count: 2,
                hidden_dim: 64,
                repr_dim: 64,
                ..AdapterConfig::default()
            },
            heads: HeadsConfig {
                proj_dim: 32,
                head_hidden: 64,
                ..HeadsConfig::default()
            },
            standardize_samples: 128,
            ..Self::default()
        }
    }

    pub fn scatter_config(&self) -> ScatterConfig {
        ScatterConfig {
            scales: self.scales,
            orientations: self.orientations,
            order: self.order,
            pad_policy: self.pad_policy,
        }
    }

    /// Heads configuration with the class count implied by the pretext task.
    pub fn resolved_heads(&self) -> HeadsConfig {
        let mut h = self.heads.clone();
        h.pretext_classes = match self.pretext {
            PretextTask::Rotation => 4,
            PretextTask::Jigsaw => self.jigsaw_classes,
            PretextTask::None => 0,
        };
        h
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 so every view has negatives, got {}",
                self.batch_size
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.pretext == PretextTask::Jigsaw && self.jigsaw_classes < 2 {
            return Err(Error::Config("jigsaw needs at least two classes".into()));
        }
        self.scatter_config().validate()?;
        self.adapter.validate()?;
        self.resolved_heads().validate()?;
        self.lambda.validate()?;
        self.optimizer.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = TrainConfig::desk();
        cfg.max_steps = Some(7);
        cfg.lambda = LambdaSchedule::Constant { value: 0.25 };
        let text = cfg.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = TrainConfig::from_toml("epochs = 3\n[adapter]\nblock_count = 8\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.adapter.block_count, 8);
        assert_eq!(cfg.adapter.hidden_dim, 512);
        assert!(TrainConfig::from_toml("epochz = 3").is_err());
    }

    #[test]
    fn batch_of_one_rejected() {
        let cfg = TrainConfig { batch_size: 1, ..TrainConfig::desk() };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::desk().validate().is_ok());
    }
}
