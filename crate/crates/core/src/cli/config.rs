//! Run configuration: one flat TOML or JSON file, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingConfig, TaskFeatures};
use crate::error::{Error, Result};
use crate::evaluation::external::DEFAULT_TIMEOUT;
use crate::rng;
use crate::search::SearchConfig;

/// Environment variable naming an external evaluator command.
pub const EVALUATOR_ENV: &str = "COMPSEARCH_EVALUATOR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Simulated,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Ablation {
    NoKg,
    NoExp,
    NoProgressiveReplay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub gamma: f64,
    pub max_len: usize,
    pub train_epochs: usize,
    pub search_epochs: usize,
    pub budget: Option<usize>,
    pub sample_size: usize,
    pub cap: usize,
    pub lambda: f64,
    pub lr: f64,
    pub embedding_dim: usize,
    pub evaluator: EvaluatorKind,
    /// Falls back to `$COMPSEARCH_EVALUATOR` when unset.
    pub evaluator_command: Option<String>,
    pub evaluator_pool: usize,
    pub evaluator_timeout_secs: u64,
    /// Seed of the simulated environment; derived from `seed` when unset.
    pub evaluator_seed: Option<u64>,
    pub pretrain_epochs: u32,
    pub task: TaskFeatures,
    pub catalog_filter: Option<PathBuf>,
    /// Experience records (JSON lines); synthetic records are generated when unset.
    pub records: Option<PathBuf>,
    pub synthetic_records: usize,
    pub out_dir: PathBuf,
    pub oracle_limit: u64,
    pub no_kg: bool,
    pub no_exp: bool,
    pub no_progressive_replay: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            gamma: 0.3,
            max_len: 5,
            train_epochs: 50,
            search_epochs: 50,
            budget: None,
            sample_size: 8,
            cap: 16,
            lambda: 0.7,
            lr: 0.001,
            embedding_dim: 32,
            evaluator: EvaluatorKind::Simulated,
            evaluator_command: None,
            evaluator_pool: 1,
            evaluator_timeout_secs: DEFAULT_TIMEOUT.as_secs(),
            evaluator_seed: None,
            pretrain_epochs: 200,
            task: TaskFeatures::cifar10_resnet56(),
            catalog_filter: None,
            records: None,
            synthetic_records: 1000,
            out_dir: PathBuf::from("run"),
            oracle_limit: crate::search::oracle::DEFAULT_LIMIT,
            no_kg: false,
            no_exp: false,
            no_progressive_replay: false,
        }
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.search_config().validate()?;
        self.task.validate()?;
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if self.evaluator_pool == 0 {
            return Err(Error::Config("evaluator_pool must be at least 1".into()));
        }
        if self.pretrain_epochs == 0 {
            return Err(Error::Config("pretrain_epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn apply_ablation(&mut self, a: Ablation) {
        match a {
            Ablation::NoKg => self.no_kg = true,
            Ablation::NoExp => self.no_exp = true,
            Ablation::NoProgressiveReplay => self.no_progressive_replay = true,
        }
    }

    pub fn simulator_seed(&self) -> u64 {
        self.evaluator_seed.unwrap_or_else(|| rng::derive_seed(self.seed, "evaluator"))
    }

    /// The external evaluator command, from the config or the environment.
    pub fn external_command(&self) -> Result<String> {
        self.evaluator_command
            .clone()
            .or_else(|| std::env::var(EVALUATOR_ENV).ok().filter(|s| !s.trim().is_empty()))
            .ok_or_else(|| {
                Error::Config(format!("external evaluator selected but neither evaluator_command nor ${EVALUATOR_ENV} is set"))
            })
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            gamma: self.gamma,
            max_len: self.max_len,
            rounds: self.search_epochs,
            budget: self.budget,
            sample_size: self.sample_size,
            cap: self.cap,
            lambda: self.lambda,
            lr: self.lr,
            replay: !self.no_progressive_replay,
            seed: self.seed,
        }
    }

    pub fn embedding_config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            dim: self.embedding_dim,
            train_epochs: self.train_epochs,
            kg_training: !self.no_kg,
            exp_training: !self.no_exp,
            seed: self.seed,
            ..Default::default()
        }
    }

    /// Hash of every setting except `seed` and `out_dir`, so that runs of one
    /// configuration under different seeds share it.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Some(map) = value.as_object_mut() {
            map.remove("seed");
            map.remove("out_dir");
        }
        format!("{:016x}", rng::fnv1a64(value.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "seed = 3\ngamma = 0.4\nmax_len = 2\nno_kg = true\n").unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"seed": 3, "gamma": 0.4, "max_len": 2, "no_kg": true}"#).unwrap();
        let a = RunConfig::from_path(&t).unwrap();
        assert_eq!(a, RunConfig::from_path(&j).unwrap());
        assert_eq!(a.gamma, 0.4);
        assert!(!a.embedding_config().kg_training);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "gama = 0.4\n").unwrap();
        assert!(RunConfig::from_path(&t).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for cfg in [
            RunConfig { gamma: 1.0, ..Default::default() },
            RunConfig { max_len: 0, ..Default::default() },
            RunConfig { budget: Some(0), ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn hash_ignores_seed_and_out_dir() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 9, out_dir: "elsewhere".into(), ..Default::default() };
        let c = RunConfig { gamma: 0.5, ..Default::default() };
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
    }
}
