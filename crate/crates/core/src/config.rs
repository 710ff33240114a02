//! Campaign configuration: one TOML file drives every stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::TrainConfig;
use crate::artifact::{hash_bytes, Provenance};
use crate::classifier::{ForestConfig, TreeParams};
use crate::env::{EnvConfig, EnvKind};
use crate::search::{FitnessThresholds, SearchConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionSection {
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Random executions collected for the classifier dataset.
    pub random_episodes: usize,
    /// Training-log episodes sampled with late-episode bias.
    pub training_episodes: usize,
    /// Share of the dataset used to fit the forest; the rest is held out.
    pub train_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            random_episodes: 1400,
            training_episodes: 600,
            train_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    /// Random executions forming the initial population.
    pub initial_population: usize,
    /// Independent seeded search runs.
    pub runs: usize,
    pub temperature: f64,
    #[serde(flatten)]
    pub ga: SearchConfig,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            initial_population: 200,
            runs: 10,
            temperature: 1.0,
            ga: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub resamples: usize,
    pub baseline_pool: usize,
    pub sweep_levels: Vec<f64>,
    pub rule_folds: usize,
    pub rule_tree: TreeParams,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            resamples: 100,
            baseline_pool: 10_000,
            sweep_levels: vec![0.01, 0.1, 0.5, 1.0, 5.0, 20.0, 100.0],
            rule_folds: 5,
            rule_tree: TreeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: TrainConfig,
    pub abstraction: AbstractionSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub classifier: ForestConfig,
    #[serde(default)]
    pub search: SearchSection,
    pub thresholds: FitnessThresholds,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

pub const CART_POLE_PRESET: &str = include_str!("../configs/cartpole.toml");
pub const MOUNTAIN_CAR_PRESET: &str = include_str!("../configs/mountain_car.toml");

fn invalid(field: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl CampaignConfig {
    /// Parses a campaign file. Keys it leaves out are taken from the bundled
    /// preset for its `env.kind` (Cart-Pole when no kind is given).
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse {
            path: origin.to_path_buf(),
            message,
        };
        let user: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let kind = user
            .get("env")
            .and_then(|env| env.get("kind"))
            .and_then(|k| k.as_str())
            .unwrap_or("cart_pole");
        let base = match kind {
            "mountain_car" => MOUNTAIN_CAR_PRESET,
            _ => CART_POLE_PRESET,
        };
        let mut merged: toml::Table = toml::from_str(base).expect("bundled presets parse");
        merge(&mut merged, user);
        let config = CampaignConfig::deserialize(toml::Value::Table(merged))
            .map_err(|e| parse_err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn preset(kind: EnvKind) -> Self {
        let (text, name) = match kind {
            EnvKind::CartPole => (CART_POLE_PRESET, "configs/cartpole.toml"),
            EnvKind::MountainCar => (MOUNTAIN_CAR_PRESET, "configs/mountain_car.toml"),
        };
        Self::from_toml(text, Path::new(name)).expect("bundled presets are valid")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| invalid("env", e))?;
        self.agent.validate().map_err(|e| invalid("agent", e))?;
        if !(self.abstraction.d > 0.0 && self.abstraction.d.is_finite()) {
            return Err(invalid("abstraction.d", "must be positive and finite"));
        }
        let f = self.dataset.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid("dataset.train_fraction", "must lie strictly between 0 and 1"));
        }
        if self.dataset.random_episodes + self.dataset.training_episodes < 2 {
            return Err(invalid("dataset", "needs at least two episodes"));
        }
        if self.classifier.trees == 0 {
            return Err(invalid("classifier.trees", "must be positive"));
        }
        if self.search.initial_population == 0 {
            return Err(invalid("search.initial_population", "must be positive"));
        }
        if self.search.runs == 0 {
            return Err(invalid("search.runs", "must be positive"));
        }
        if !(self.search.temperature > 0.0) {
            return Err(invalid("search.temperature", "must be positive"));
        }
        self.search.ga.validate().map_err(|e| invalid("search", e))?;
        self.thresholds.validate().map_err(|e| invalid("thresholds", e))?;
        if self.experiment.resamples == 0 || self.experiment.baseline_pool == 0 {
            return Err(invalid("experiment", "resamples and baseline_pool must be positive"));
        }
        if self.experiment.rule_folds < 2 {
            return Err(invalid("experiment.rule_folds", "must be at least 2"));
        }
        if self.experiment.sweep_levels.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(invalid("experiment.sweep_levels", "levels must be positive and finite"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering, so formatting and comments in
    /// the TOML source do not matter.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        hash_bytes(serde_json::to_string(&canonical).expect("config serializes").as_bytes())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.hash(), self.seed)
    }

    /// Every stage seed derives from this one.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}
