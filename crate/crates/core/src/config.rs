//! Run configuration, read from TOML with one table per level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Aggregation;
use crate::error::{Error, Result};
use crate::finetune::FineTuneConfig;
use crate::model_evolution::ModelEvolutionConfig;
use crate::nn::{Activation, LayerKind};
use crate::subspace::SubspaceEvolutionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    /// Reduction ratio for the evolution levels.
    pub sigma: usize,
    pub aggregation: Aggregation,
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: PathBuf::new(),
            test: PathBuf::new(),
            sigma: 5,
            aggregation: Aggregation::Median,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Epochs for the final full-resolution training of each best genome.
    pub final_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            final_epochs: 30,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub percentile: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { percentile: 99.9 }
    }
}

/// Fixed all-feature autoencoder used as a reference detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub enabled: bool,
    pub window_size: usize,
    pub channels: Vec<usize>,
    pub learning_rate: f64,
    pub activation: Activation,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window_size: 4,
            channels: vec![32, 24, 16],
            learning_rate: 0.01,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub subspaces: SubspaceEvolutionConfig,
    pub models: ModelEvolutionConfig,
    pub training: TrainingConfig,
    pub finetune: FineTuneConfig,
    pub ensemble: EnsembleConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            subspaces: SubspaceEvolutionConfig::default(),
            models: ModelEvolutionConfig::default(),
            training: TrainingConfig::default(),
            finetune: FineTuneConfig::default(),
            ensemble: EnsembleConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train, &mut cfg.data.test] {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.data.sigma == 0 || self.data.stride == 0 {
            return Err(Error::Config("sigma and stride must be at least 1".into()));
        }
        self.subspaces.validate()?;
        self.models.validate()?;
        self.finetune.validate()?;
        if self.training.final_epochs == 0 || self.training.batch_size == 0 {
            return Err(Error::Config("final epochs and batch size must be positive".into()));
        }
        if !(self.ensemble.percentile > 0.0 && self.ensemble.percentile <= 100.0) {
            return Err(Error::Config("percentile must lie in (0, 100]".into()));
        }
        let b = &self.baseline;
        if b.enabled && (b.channels.len() < 3 || b.window_size == 0 || b.channels.contains(&0)) {
            return Err(Error::Config(
                "baseline needs at least 3 non-empty layers and a window".into(),
            ));
        }
        Ok(())
    }

    /// Layer kind used throughout model evolution.
    pub fn layer_kind(&self) -> LayerKind {
        self.models.layer_kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_tables() {
        let c = RunConfig::default();
        assert_eq!((c.subspaces.population_size, c.subspaces.generations), (16, 10));
        assert_eq!(
            (c.subspaces.mutation_probability, c.subspaces.crossover_probability),
            (0.1, 0.1)
        );
        assert_eq!((c.models.population_size, c.models.generations), (24, 16));
        assert_eq!(
            (c.models.mutation_probability, c.models.crossover_probability),
            (0.5, 0.5)
        );
        assert_eq!((c.finetune.population_size, c.finetune.generations), (24, 64));
        assert_eq!(c.finetune.mutation_probability, 0.02);
        assert_eq!(c.finetune.mutation_power, 1.0 / 256.0);
        assert_eq!(c.subspaces.k, 5);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_dotted_sections() {
        let c = RunConfig::from_toml(
            "seed = 7\n[subspaces]\nk = 3\n[models.bounds]\nmax_channels = 64\n[finetune]\nmutation_power = 0.0078125\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.subspaces.k, 3);
        assert_eq!(c.models.bounds.max_channels, 64);
        assert_eq!(c.models.bounds.min_channels, 16);
        assert_eq!(c.finetune.mutation_power, 1.0 / 128.0);
        let again = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        assert!(RunConfig::from_toml("seed = \"x\"").is_err());
    }
}
