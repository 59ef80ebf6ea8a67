use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::LossConfig;
use crate::detector::NoiseConfig;
use crate::fusion::FusionConfig;
use crate::pnp::RansacConfig;
use crate::sampler::SamplerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing TOML config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("parsing JSON config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported config extension {0:?} (expected .toml or .json)")]
    Extension(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed. Loading a config copies it into every section, so the
    /// per-section seeds only matter when a section is used on its own.
    pub seed: u64,
    pub n_frames: usize,
    /// Present detector queries in random order so that matching is
    /// exercised.
    pub permute_queries: bool,
    pub sampler: SamplerConfig,
    pub noise: NoiseConfig,
    pub ransac: RansacConfig,
    pub fusion: FusionConfig,
    pub loss: LossConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            n_frames: 500,
            permute_queries: true,
            sampler: SamplerConfig::default(),
            noise: NoiseConfig::default(),
            ransac: RansacConfig::default(),
            fusion: FusionConfig::default(),
            loss: LossConfig::default(),
        }
        .with_seed(20240521)
    }
}

impl PipelineConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sampler.seed = seed;
        self.noise.seed = seed;
        self.ransac.seed = seed;
        self
    }

    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        let cfg = cfg.clone().with_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s)?;
        let cfg = cfg.clone().with_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads TOML or JSON according to the file extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            Some("json") => Self::from_json(&text),
            other => Err(ConfigError::Extension(other.unwrap_or_default().to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        crate::sampler::PoseSampler::new(&self.sampler).map_err(|e| invalid(&e))?;
        self.noise.validate().map_err(|e| invalid(&e))?;
        self.ransac.validate().map_err(|e| invalid(&e))?;
        if !(0.0..1.0).contains(&self.fusion.gate) {
            return Err(ConfigError::Invalid(format!("fusion gate {} outside [0, 1)", self.fusion.gate)));
        }
        if !(self.loss.gamma >= 0.0 && self.loss.no_object_weight >= 0.0) {
            return Err(ConfigError::Invalid("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}
