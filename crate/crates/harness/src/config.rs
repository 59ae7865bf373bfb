//! Experiment configuration files.

use std::path::{Path, PathBuf};

use misac_chansim::ScenarioConfig;
use misac_core::{ArchConfig, ModelSpec};
use misac_tasks::{RunInfo, TaskSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Subdirectory of `output_dir` holding the dataset unless `dataset_dir` is set.
pub const DATASET_SUBDIR: &str = "dataset";

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One experiment: a scenario, a task, a model and its training schedule,
/// run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    pub task: TaskSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(&json))
}

impl ExperimentConfig {
    /// Parse TOML text. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.message().to_string()))?;
        config.output_dir = base.join(&config.output_dir);
        config.dataset_dir = config.dataset_dir.map(|d| base.join(d));
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("`seeds` must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(HarnessError::Config("`seeds` contains duplicates".into()));
        }
        self.scenario.validate()?;
        self.task.validate()?;
        self.arch.validate().map_err(|e| HarnessError::Config(format!("arch: {e}")))?;
        self.train.validate()?;
        // Routing, static weights and unimodal choices are checked by
        // building the model once.
        misac_tasks::build_model_for(&self.model, &self.arch, &self.task, &self.scenario, 0)
            .map_err(|e| HarnessError::Config(format!("model: {e}")))?;
        Ok(())
    }

    /// The configuration with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset_dir.clone().unwrap_or_else(|| self.output_dir.join(DATASET_SUBDIR))
    }

    /// Hash identifying the dataset this experiment trains on.
    pub fn dataset_hash(&self) -> String {
        misac_chansim::dataset::config_hash(&self.scenario, self.train.train_fraction)
    }

    /// Hash of everything that determines results, across all seeds.
    /// Output locations are excluded.
    pub fn config_hash(&self) -> String {
        let key = (&self.seeds, &self.scenario, &self.task, &self.model, &self.arch, &self.train);
        sha256_json(&key)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    /// Everything that determines the run for one seed, with its hash.
    pub fn run_info(&self, seed: u64) -> RunInfo {
        let mut info = RunInfo {
            config_hash: String::new(),
            dataset_hash: self.dataset_hash(),
            model: self.model.clone(),
            arch: self.arch.clone(),
            task: self.task.clone(),
            train: self.train_config(seed),
        };
        info.config_hash = sha256_json(&info);
        info
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed-{seed}"))
    }
}
