//! TOML configuration for the `queryloop` binary.
//!
//! A config file names the data files and picks backends for the three
//! seams: retriever, policy, and (optionally) the frozen answer generator.
//! Relative paths are resolved against the config file's directory, so a
//! config can travel with its fixtures.
//!
//! ```toml
//! corpus_path = "corpus.jsonl"
//! index_path = "bm25.json"
//! trace_path = "traces.jsonl"
//!
//! [retriever]
//! kind = "embedded"            # or kind = "remote" with url = "http://..."
//!
//! [policy]
//! kind = "scripted"
//! script_path = "policy.json"
//!
//! [generator]
//! kind = "remote"
//! endpoint = "http://localhost:8000/v1/completions"
//! model = "my-model"
//! # api_token here, or set QUERYLOOP_API_TOKEN (the env var wins)
//!
//! [rollout]
//! max_turns = 4
//!
//! [eval]
//! mode = "end_to_end"
//! concurrency = 8
//! fail_open = true
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use queryloop_core::grpo::GrpoParams;
use queryloop_core::rollout::RolloutConfig;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub corpus_path: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    /// Default trajectory sink for `run`; the `--trace` flag overrides it.
    pub trace_path: Option<PathBuf>,
    #[serde(default)]
    pub retriever: RetrieverSection,
    pub policy: Option<BackendSection>,
    pub generator: Option<BackendSection>,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub grpo: GrpoParams,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RetrieverSection {
    /// BM25 over the corpus named by `corpus_path`.
    Embedded,
    /// An HTTP search service.
    Remote { url: String },
}

impl Default for RetrieverSection {
    fn default() -> Self {
        RetrieverSection::Embedded
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSection {
    Scripted {
        script_path: PathBuf,
    },
    Remote {
        endpoint: String,
        model: String,
        api_token: Option<String>,
        logprobs: Option<u32>,
    },
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// `end_to_end` or `submodule`; the `--mode` flag overrides it.
    pub mode: Option<String>,
    pub concurrency: Option<usize>,
    pub fail_open: Option<bool>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {reason}")]
    Parse { path: String, reason: String },
}

/// Loads a config file and remembers its directory for path resolution.
pub struct LoadedConfig {
    pub config: AppConfig,
    base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: AppConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(LoadedConfig { config, base })
    }

    /// Resolves a config-relative path.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }
}
