//! Run configuration: a TOML file merged under command-line flags.
//!
//! Precedence is flags > file > defaults. [`AppConfig::to_toml`] emits the
//! effective configuration, and loading that file back reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendConfig;
use crate::pipeline::PipelineConfig;
use crate::synth::{DATASET_FILE, FIXTURES_FILE, KB_FILE, MANIFEST_FILE, SPLIT_FILE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

/// Input file locations. A data directory fills in any path left unset with
/// the file names written by `synth`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub split_manifest: Option<PathBuf>,
}

impl DataPaths {
    fn in_dir(&self, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
        explicit.clone().or_else(|| self.dir.as_ref().map(|d| d.join(name)))
    }

    pub fn dataset(&self) -> Option<PathBuf> {
        self.in_dir(&self.dataset, DATASET_FILE)
    }

    pub fn kb(&self) -> Option<PathBuf> {
        self.in_dir(&self.kb, KB_FILE)
    }

    /// Fixtures are optional, so the data-directory default is used only when
    /// the file exists.
    pub fn fixtures(&self) -> Option<PathBuf> {
        self.fixtures
            .clone()
            .or_else(|| self.dir.as_ref().map(|d| d.join(FIXTURES_FILE)).filter(|p| p.exists()))
    }

    /// The split manifest is likewise picked up only if present.
    pub fn split_manifest(&self) -> Option<PathBuf> {
        self.split_manifest
            .clone()
            .or_else(|| self.dir.as_ref().map(|d| d.join(SPLIT_FILE)).filter(|p| p.exists()))
    }

    pub fn manifest(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(MANIFEST_FILE)).filter(|p| p.exists())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub backend: BackendConfig,
    pub pipeline: PipelineConfig,
    /// Worker threads for batch classification.
    pub parallelism: usize,
    /// Per-instance trace files are written here when set.
    pub trace_dir: Option<PathBuf>,
    pub data: DataPaths,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::default(),
            pipeline: PipelineConfig::default(),
            parallelism: 4,
            trace_dir: None,
            data: DataPaths::default(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(s: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&s, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.backend
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = AppConfig::default();
        assert_eq!(AppConfig::from_toml(&c.to_toml(), "t").unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = AppConfig::from_toml("[pipeline.retrieval]\ntop_k = 3\n", "t").unwrap();
        assert_eq!(c.pipeline.retrieval.top_k, 3);
        assert_eq!(c.pipeline.tau, 0.85);
        assert_eq!(c.pipeline.budget.max_iterations, 3);
    }

    #[test]
    fn unknown_top_level_key_rejected() {
        assert!(AppConfig::from_toml("paralelism = 2\n", "t").is_err());
    }

    #[test]
    fn data_dir_fills_paths() {
        let d = DataPaths {
            dir: Some("syn".into()),
            kb: Some("other.jsonl".into()),
            ..DataPaths::default()
        };
        assert_eq!(d.dataset(), Some(PathBuf::from("syn/dataset.jsonl")));
        assert_eq!(d.kb(), Some(PathBuf::from("other.jsonl")));
    }
}
