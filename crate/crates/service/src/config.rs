//! Boot-time configuration: a TOML file plus `ROLEREWARD_*` environment
//! overrides.

use std::path::{Path, PathBuf};

use rolereward_core::grpo::GrpoConfig;
use rolereward_core::normalizer::{NormalizerState, WeightVector, DEFAULT_DECAY, DEFAULT_EPSILON};
use rolereward_core::pipeline::ScoringConfig;
use rolereward_core::reward::RefRewardConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix of every environment override, e.g. `ROLEREWARD_PORT=9000`.
pub const ENV_PREFIX: &str = "ROLEREWARD_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("environment override {key}: cannot parse `{value}`")]
    Env { key: String, value: String },
    #[error("unknown environment override {0}")]
    UnknownEnv(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub weights: WeightVector,
    pub decay: f64,
    pub epsilon_norm: f64,
    pub epsilon_adv: f64,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub ref_metrics: RefRewardConfig,
    pub gate_after_normalize: bool,
    /// Largest accepted request body.
    pub max_body_bytes: usize,
    /// Where to write the stats snapshot on shutdown.
    pub snapshot_on_exit: Option<PathBuf>,
    /// Snapshot restored at boot.
    pub stats_path: Option<PathBuf>,
    /// Group model installed at boot.
    pub groups_model: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let grpo = GrpoConfig::default();
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            weights: WeightVector::default(),
            decay: DEFAULT_DECAY,
            epsilon_norm: DEFAULT_EPSILON,
            epsilon_adv: grpo.adv_epsilon,
            clip_epsilon: grpo.clip_epsilon,
            kl_beta: grpo.kl_beta,
            ref_metrics: RefRewardConfig::default(),
            gate_after_normalize: false,
            max_body_bytes: 64 * 1024 * 1024,
            snapshot_on_exit: None,
            stats_path: None,
            groups_model: None,
        }
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Env {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults when `None`), applies the process environment
    /// and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text)?
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `ROLEREWARD_*` pairs; other variables are ignored.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (key, value) in vars {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let v = value.as_str();
            match name {
                "HOST" => self.host = value.clone(),
                "PORT" => self.port = parse_env(&key, v)?,
                "DECAY" => self.decay = parse_env(&key, v)?,
                "EPSILON_NORM" => self.epsilon_norm = parse_env(&key, v)?,
                "EPSILON_ADV" => self.epsilon_adv = parse_env(&key, v)?,
                "CLIP_EPSILON" => self.clip_epsilon = parse_env(&key, v)?,
                "KL_BETA" => self.kl_beta = parse_env(&key, v)?,
                "WEIGHTS_FOCUS" => self.weights.focus = parse_env(&key, v)?,
                "WEIGHTS_ATTR" => self.weights.attr = parse_env(&key, v)?,
                "WEIGHTS_REF" => self.weights.reference = parse_env(&key, v)?,
                "GATE_AFTER_NORMALIZE" => self.gate_after_normalize = parse_env(&key, v)?,
                "MAX_BODY_BYTES" => self.max_body_bytes = parse_env(&key, v)?,
                "SNAPSHOT_ON_EXIT" => self.snapshot_on_exit = Some(PathBuf::from(v)),
                "STATS_PATH" => self.stats_path = Some(PathBuf::from(v)),
                "GROUPS_MODEL" => self.groups_model = Some(PathBuf::from(v)),
                // Logging filter, read by the binary.
                "LOG" => {}
                _ => return Err(ConfigError::UnknownEnv(key)),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.weights.is_valid() {
            return Err(ConfigError::Invalid(
                "weights must be finite and non-negative".into(),
            ));
        }
        NormalizerState::new(self.decay, self.epsilon_norm)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.grpo()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            clip_epsilon: self.clip_epsilon,
            kl_beta: self.kl_beta,
            adv_epsilon: self.epsilon_adv,
            ..GrpoConfig::default()
        }
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            weights: self.weights,
            ref_metrics: self.ref_metrics.clone(),
            gate_after_normalize: self.gate_after_normalize,
        }
    }

    pub fn fresh_normalizer(&self) -> NormalizerState {
        NormalizerState::new(self.decay, self.epsilon_norm).expect("validated config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let cfg = ServiceConfig::from_toml(
            r#"
            port = 9100
            decay = 0.95
            epsilon_norm = 1e-6
            kl_beta = 0.04
            weights = { focus = 0.5, attr = 0.25, ref = 0.25 }
            ref_metrics = { metrics = [{ max_n = 1, weights = [1.0], smoothing = "none" }] }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.port, 9100);
        assert_eq!(cfg.weights.reference, 0.25);
        assert_eq!(cfg.ref_metrics.metrics().len(), 1);
        assert_eq!(cfg.grpo().kl_beta, 0.04);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ServiceConfig::from_toml("port = 1\nbogus_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
        let err = ServiceConfig::from_toml(
            "weights = { focus = 1.0, attr = 0.0, ref = 0.0, extra = 1.0 }",
        )
        .unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn env_overrides_apply() {
        let mut cfg = ServiceConfig::default();
        cfg.apply_env([
            ("ROLEREWARD_PORT".to_string(), "7000".to_string()),
            ("ROLEREWARD_WEIGHTS_REF".to_string(), "0.5".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ])
        .unwrap();
        assert_eq!((cfg.port, cfg.weights.reference), (7000, 0.5));
        assert!(cfg
            .apply_env([("ROLEREWARD_PORT".to_string(), "x".to_string())])
            .is_err());
        assert!(matches!(
            cfg.apply_env([("ROLEREWARD_NOPE".to_string(), "1".to_string())]),
            Err(ConfigError::UnknownEnv(_))
        ));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ServiceConfig::from_toml("decay = 1.5").is_err());
        assert!(ServiceConfig::from_toml("clip_epsilon = 0.0").is_err());
        assert!(
            ServiceConfig::from_toml("weights = { focus = -1.0, attr = 0.0, ref = 0.0 }").is_err()
        );
    }
}
