//! Experiment configuration: one JSON document drives a whole run.
//!
//! Every field has a default; the committed reference config spells all of
//! them out. Unknown fields are rejected so typos fail loudly at parse
//! time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::network::Activation;
use crate::tasks::StreamSpec;
use crate::trainer::TrainConfig;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// Fit a held-out generic task into the backbone before freezing it.
    pub pretrain: bool,
    pub pretrain_epochs: usize,
    pub pretrain_classes: usize,
    pub pretrain_separation: f64,
    pub pretrain_lr: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![64, 64, 64],
            activation: Activation::Tanh,
            pretrain: true,
            pretrain_epochs: 2,
            pretrain_classes: 24,
            pretrain_separation: 5.5,
            pretrain_lr: 3e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSpec,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stream: StreamSpec::Gaussian {
                tasks: 5,
                classes_per_task: 4,
                input_dim: 32,
                separation: 5.5,
                train_per_class: 200,
                test_per_class: 200,
            },
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidInput("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::InvalidInput("duplicate seeds".into()));
        }
        self.train.validate()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Method;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json_str(&cfg.to_pretty_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn committed_reference_config_is_the_default() {
        // the repo ships every default spelled out; keep it in sync
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs/default.json");
        let committed = ExperimentConfig::from_path(&path).unwrap();
        assert_eq!(committed, ExperimentConfig::default());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), committed.to_pretty_json());
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg = ExperimentConfig::from_json_str(r#"{"seeds": [9]}"#).unwrap();
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.train.epochs, 10);
        assert_eq!(cfg.train.method, Method::Split);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json_str(r#"{"sseds": [1]}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"train": {"epoch": 3}}"#).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        assert!(ExperimentConfig::from_json_str(r#"{"seeds": []}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"seeds": [1, 1]}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"train": {"alpha": -2.0}}"#).is_err());
    }
}
