//! Flat TOML settings file.
//!
//! ```toml
//! backend = "mock"          # mock | llm | replay
//! dialect = "tsql"
//! max_repairs = 3
//! anchors_enabled = true
//! validation_enabled = true
//! anchor_table = "anchors.tsv"
//! max_depth = 64
//! llm_timeout_secs = 120
//! llm_retries = 3
//! llm_concurrency = 4
//! record = "run.jsonl"
//! replay = "run.jsonl"
//! jobs = 1
//! ```
//!
//! The LLM endpoint, key and model come from the environment only.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::LlmConfig;
use crate::engine::EngineConfig;
use crate::expr::{AnchorTable, AnchorTableError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Llm,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendKind::Mock),
            "llm" => Ok(BackendKind::Llm),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!(
                "unknown backend `{other}` (expected mock, llm or replay)"
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub backend: BackendKind,
    pub dialect: Option<String>,
    pub max_repairs: Option<usize>,
    pub anchors_enabled: Option<bool>,
    pub validation_enabled: Option<bool>,
    pub anchor_table: Option<PathBuf>,
    pub max_depth: Option<usize>,
    pub llm_timeout_secs: Option<u64>,
    pub llm_retries: Option<u32>,
    pub llm_concurrency: Option<usize>,
    pub record: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error(transparent)]
    Anchors(#[from] AnchorTableError),
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn engine_config(&self) -> Result<EngineConfig, ConfigError> {
        let defaults = EngineConfig::default();
        let anchors = match &self.anchor_table {
            Some(path) => Arc::new(AnchorTable::load(path)?),
            None => defaults.anchors,
        };
        Ok(EngineConfig {
            max_repairs: self.max_repairs.unwrap_or(defaults.max_repairs),
            anchors_enabled: self.anchors_enabled.unwrap_or(defaults.anchors_enabled),
            validation_enabled: self
                .validation_enabled
                .unwrap_or(defaults.validation_enabled),
            dialect: self.dialect.clone().unwrap_or_default(),
            anchors,
            max_depth: self.max_depth.unwrap_or(defaults.max_depth),
        })
    }

    /// Endpoint settings from the environment with limits from this file.
    pub fn llm_config(&self) -> Option<LlmConfig> {
        let mut cfg = LlmConfig::from_env()?;
        if let Some(secs) = self.llm_timeout_secs {
            cfg.timeout = Duration::from_secs(secs);
        }
        if let Some(n) = self.llm_retries {
            cfg.max_retries = n;
        }
        if let Some(n) = self.llm_concurrency {
            cfg.max_concurrency = n;
        }
        Some(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let s: Settings = toml::from_str(
            "backend = \"replay\"\ndialect = \"tsql\"\nmax_repairs = 1\nanchors_enabled = false\nreplay = \"x.jsonl\"",
        )
        .unwrap();
        assert_eq!(s.backend, BackendKind::Replay);
        let cfg = s.engine_config().unwrap();
        assert_eq!(cfg.max_repairs, 1);
        assert!(!cfg.anchors_enabled);
        assert!(cfg.validation_enabled);
        assert_eq!(cfg.dialect, "tsql");
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<Settings>("api_key = \"secret\"").is_err());
    }

    #[test]
    fn empty_file_gives_defaults() {
        let s: Settings = toml::from_str("").unwrap();
        assert_eq!(s.backend, BackendKind::Mock);
        assert_eq!(s.engine_config().unwrap().max_repairs, 3);
    }
}
