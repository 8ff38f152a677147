//! Run configuration. Every field has a default; unknown keys are rejected
//! with the offending name.

use crate::models::NetDims;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("i/o error reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub resolution: usize,
    pub d_z: usize,
    pub d_s: usize,
    pub g_base: usize,
    pub d_base: usize,
    pub emb_dim: usize,
    pub rnn_hidden: usize,
    pub max_tokens: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Reconstruction coefficient (active with `use_ssd`).
    pub coef_rec: f64,
    /// Feature-aware coefficient (active with `use_fa`).
    pub coef_fa: f64,
    pub magp_k: f64,
    pub magp_p: f64,
    pub use_ssd: bool,
    pub use_fa: bool,
    /// Generator regularized by perceptual distance to the real image
    /// instead of the feature-aware term (regularizer comparison).
    pub use_perceptual: bool,
    pub coef_perceptual: f64,
    pub eval_interval: u64,
    pub checkpoint_interval: u64,
    pub eval_samples: usize,
    pub eval_fraction: f64,
    pub encoder_steps: u64,
    pub extractor_steps: u64,
    pub perceptual_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            steps: 8000,
            batch_size: 32,
            resolution: 32,
            d_z: 100,
            d_s: 128,
            g_base: 32,
            d_base: 32,
            emb_dim: 48,
            rnn_hidden: 64,
            max_tokens: 12,
            lr_g: 1e-4,
            lr_d: 4e-4,
            beta1: 0.0,
            beta2: 0.9,
            coef_rec: 1.0,
            coef_fa: 1.0,
            magp_k: 2.0,
            magp_p: 6.0,
            use_ssd: true,
            use_fa: true,
            use_perceptual: false,
            coef_perceptual: 1.0,
            eval_interval: 2000,
            checkpoint_interval: 2000,
            eval_samples: 2048,
            eval_fraction: 0.2,
            encoder_steps: 600,
            extractor_steps: 1200,
            perceptual_seed: 9090,
        }
    }
}

impl TrainConfig {
    pub fn net_dims(&self) -> NetDims {
        NetDims {
            resolution: self.resolution,
            d_z: self.d_z,
            d_s: self.d_s,
            g_base: self.g_base,
            d_base: self.d_base,
            emb_dim: self.emb_dim,
            rnn_hidden: self.rnn_hidden,
            max_tokens: self.max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.net_dims()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.steps == 0 {
            return Err(ConfigError::Invalid("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be at least 1".into()));
        }
        for (name, v) in [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("magp_k", self.magp_k),
            ("magp_p", self.magp_p),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("coef_rec", self.coef_rec),
            ("coef_fa", self.coef_fa),
            ("coef_perceptual", self.coef_perceptual),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(0.05..0.9).contains(&self.eval_fraction) {
            return Err(ConfigError::Invalid(format!(
                "eval_fraction must be in [0.05, 0.9), got {}",
                self.eval_fraction
            )));
        }
        if self.eval_samples < 2 {
            return Err(ConfigError::Invalid("eval_samples must be at least 2".into()));
        }
        if self.eval_interval == 0 || self.checkpoint_interval == 0 {
            return Err(ConfigError::Invalid(
                "eval_interval and checkpoint_interval must be positive".into(),
            ));
        }
        if self.encoder_steps == 0 || self.extractor_steps == 0 {
            return Err(ConfigError::Invalid(
                "encoder_steps and extractor_steps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = TrainConfig::from_json(r#"{ "stepz": 10 }"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stepz"), "message should name the key: {msg}");
        assert!(msg.contains("line"), "message should carry a location: {msg}");
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg = TrainConfig::from_json(r#"{ "steps": 10, "use_fa": false }"#).unwrap();
        assert_eq!(cfg.steps, 10);
        assert!(!cfg.use_fa);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig::from_json(r#"{ "steps": 0 }"#).is_err());
        assert!(TrainConfig::from_json(r#"{ "lr_g": 0.0 }"#).is_err());
        assert!(TrainConfig::from_json(r#"{ "resolution": 24 }"#).is_err());
    }
}
