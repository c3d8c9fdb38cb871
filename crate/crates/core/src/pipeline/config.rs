use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deep_rag::RagConfig;
use crate::llm::BackendConfig;
use crate::metrics::AcrsWeights;
use crate::planner::DEFAULT_LIMIT;
use crate::ranker::RankConfig;

/// Every tunable of a run. Loaded from TOML; command-line flags override
/// file values, which override defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// CEE document; the bundled one when absent.
    pub cee: Option<PathBuf>,
    /// Verification samples; the bundled ones when absent.
    pub samples: Option<PathBuf>,
    pub output: PathBuf,
    pub unit_limit: usize,
    /// Worker pool size K.
    pub workers: usize,
    pub live: bool,
    pub rank: RankConfig,
    pub rag: RagConfig,
    pub backend: BackendConfig,
    pub acrs: AcrsWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cee: None,
            samples: None,
            output: PathBuf::from("exguard-out"),
            unit_limit: DEFAULT_LIMIT,
            workers: 8,
            live: false,
            rank: RankConfig::default(),
            rag: RagConfig::default(),
            backend: BackendConfig::default(),
            acrs: AcrsWeights::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|detail| ConfigError::Parse { path: path.display().to_string(), detail })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.unit_limit < 10 {
            return Err(ConfigError::Invalid("unit_limit must be at least 10".into()));
        }
        self.rank.validate().map_err(ConfigError::Invalid)?;
        self.rag.validate().map_err(ConfigError::Invalid)?;
        self.backend.validate().map_err(ConfigError::Invalid)?;
        self.acrs.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}
