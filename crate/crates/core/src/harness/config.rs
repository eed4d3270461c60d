use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{Epsilon, DEFAULT_PCA_DIM};
use crate::environment::WorldConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RelevanceMode};
use crate::numerics::{FocalParams, LrSchedule, OptimizerKind, OptimizerState};
use crate::policy::ScheduleConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// Inner (adaptation) step size of the meta-update.
    pub eta: f64,
    /// Base rate of the optimizer used for outer and online steps.
    pub learning_rate: f64,
    pub beta: f64,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub orthogonalize: bool,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Zero keeps the rate constant after warmup.
    pub decay_steps: u64,
    pub decay_power: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            eta: 1e-2,
            learning_rate: 1e-2,
            beta: 0.01,
            encoder_hidden: 32,
            decoder_hidden: 32,
            orthogonalize: true,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            optimizer: OptimizerKind::AdamW,
            weight_decay: 0.0,
            warmup_steps: 0,
            decay_steps: 0,
            decay_power: 1.0,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, relevance: RelevanceMode) -> ModelConfig {
        ModelConfig {
            beta: self.beta,
            focal: FocalParams {
                gamma: self.focal_gamma,
                alpha: self.focal_alpha,
            },
            relevance,
        }
    }

    pub fn optimizer(&self) -> OptimizerState {
        let schedule = LrSchedule {
            base_lr: self.learning_rate,
            warmup_steps: self.warmup_steps,
            total_steps: self.decay_steps,
            decay_power: self.decay_power,
        };
        let mut opt = OptimizerState::with_kind(self.optimizer, schedule);
        opt.weight_decay = self.weight_decay;
        opt
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferConfig {
    pub core_capacity: usize,
    pub reservoir_capacity: usize,
    pub core_lifespan: usize,
    pub reservoir_lifespan: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            core_capacity: 10,
            reservoir_capacity: 30,
            core_lifespan: 20,
            reservoir_lifespan: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub pca_dim: usize,
    pub epsilon: Epsilon,
    pub k_rounds: usize,
    pub k_res: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            pca_dim: DEFAULT_PCA_DIM,
            epsilon: Epsilon::AUTO,
            k_rounds: 7,
            k_res: 3,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Manifest of an external dataset; replaces the generated world.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub buffers: BufferConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            seed,
            output_dir: None,
            dataset: None,
            world: WorldConfig::default(),
            schedule: ScheduleConfig::default(),
            model: ModelSettings::default(),
            buffers: BufferConfig::default(),
            clustering: ClusteringConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        // relative dataset paths resolve against the config file
        if let (Some(ds), Some(dir)) = (&config.dataset, path.parent()) {
            if ds.is_relative() {
                config.dataset = Some(dir.join(ds));
            }
        }
        if let Some(ds) = &config.dataset {
            if !ds.exists() {
                return Err(Error::Config(format!("dataset manifest {} does not exist", ds.display())));
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() {
            self.world.validate()?;
        }
        self.schedule.validate()?;
        let m = &self.model;
        if !(m.eta >= 0.0 && m.learning_rate >= 0.0 && m.beta >= 0.0) {
            return Err(Error::Config("eta, learning_rate and beta must be nonnegative".into()));
        }
        if m.encoder_hidden == 0 || m.decoder_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.buffers.core_capacity == 0 {
            return Err(Error::Config("core_capacity must be positive".into()));
        }
        if self.clustering.pca_dim == 0 || self.clustering.k_rounds == 0 {
            return Err(Error::Config("pca_dim and k_rounds must be positive".into()));
        }
        if let Epsilon::Fixed(e) = self.clustering.epsilon {
            if !(e > 0.0) {
                return Err(Error::Config("epsilon must be positive or \"auto\"".into()));
            }
        }
        Ok(())
    }
}
