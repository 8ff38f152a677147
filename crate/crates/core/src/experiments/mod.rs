//! Experiment harness: single runs, the four-way ablation matrix, the
//! regularizer comparison, checkpoint sampling, and dataset dumps. Every
//! report row traces back to a run id, config, seed and extractor hash.

mod report;
mod runner;

pub use report::{AblationReport, LossCurveSummary, VariantOutcome};
pub use runner::{
    dump_dataset, run_ablation, run_regularizer_comparison, run_single, sample_from_checkpoint,
    RunSummary,
};

use crate::scenes::GrammarError;
use crate::training::{ConfigError, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("caption error: {0}")]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Scene(#[from] crate::scenes::SceneError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

/// A set of training runs differing only in ablation flags, sharing the
/// dataset split, sentence encoder and evaluation extractor.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub base: TrainConfig,
    /// With `shared_seed`, every variant trains from the base seed;
    /// otherwise `variant_seeds` supplies one seed per variant.
    pub shared_seed: bool,
    pub variant_seeds: Option<Vec<u64>>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            shared_seed: true,
            variant_seeds: None,
            out_dir: PathBuf::from("runs/experiment"),
        }
    }
}

impl ExperimentSpec {
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let spec: ExperimentSpec =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.base.validate()?;
        if !self.shared_seed {
            match &self.variant_seeds {
                Some(seeds) if seeds.len() == 4 => {}
                _ => {
                    return Err(ConfigError::Invalid(
                        "variant_seeds must list exactly 4 seeds when shared_seed is false".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn seed_for(&self, variant_index: usize) -> u64 {
        if self.shared_seed {
            self.base.seed
        } else {
            self.variant_seeds.as_ref().expect("validated")[variant_index]
        }
    }
}
