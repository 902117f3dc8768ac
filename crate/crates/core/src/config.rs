//! Pipeline configuration, read from TOML and validated field by field.

use crate::api_spec::ParseMode;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config value for '{field}': {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self::Invalid { field: field.to_string(), message: message.into() }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Invalid { field, .. } => Some(field),
            Self::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Bundled fixtures plus the rule-based stand-in model; records to the cache.
    Sim,
    /// Fixtures and cache only; a prompt found in neither is an error.
    Replay,
    /// OpenAI-compatible HTTP endpoint behind the cache.
    Openai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Trigram,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub embedder: EmbedderKind,
    pub embedding_model: String,
    pub embedding_dimension: usize,
    /// Extra fixtures layered over the bundled ones.
    pub fixtures: Option<PathBuf>,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Sim,
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4.1".into(),
            embedder: EmbedderKind::Trigram,
            embedding_model: "text-embedding-3-small".into(),
            embedding_dimension: 1536,
            fixtures: None,
            max_retries: 3,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Sim,
    Rest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Simulation manifest; the bundled one when absent.
    pub manifest: Option<PathBuf>,
    pub base_url: Option<String>,
    pub auth_header: Option<(String, String)>,
    pub max_in_flight: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { kind: EnvKind::Sim, manifest: None, base_url: None, auth_header: None, max_in_flight: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// API corpus JSONL; the bundled corpus when absent.
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Response cache; `<out_dir>/cache` when absent.
    pub cache_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { corpus: None, out_dir: PathBuf::from("goat-out"), cache_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub tau: f64,
    pub max_nodes: usize,
    pub cap_per_size: Option<usize>,
    pub top_k: usize,
    pub workers: usize,
    /// Reject unknown fields when reading samples.
    pub strict: bool,
    pub parse_mode: ParseMode,
    pub synth_retries: usize,
    pub agent: String,
    pub max_steps: usize,
    pub judge: bool,
    pub provider: ProviderConfig,
    pub env: EnvConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tau: 0.2,
            max_nodes: 4,
            cap_per_size: None,
            top_k: 5,
            workers: 4,
            strict: false,
            parse_mode: ParseMode::Llm,
            synth_retries: 0,
            agent: "global".into(),
            max_steps: crate::agent::DEFAULT_MAX_STEPS,
            judge: true,
            provider: ProviderConfig::default(),
            env: EnvConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Maps a TOML error onto the dotted path of the offending key where the
/// message names one.
fn toml_error(e: toml::de::Error) -> ConfigError {
    let message = e.message().to_string();
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("unknown field"))
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".to_string());
    ConfigError::invalid(&field, message)
}

impl PipelineConfig {
    pub fn from_toml(raw: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(raw).map_err(toml_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&raw)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(ConfigError::invalid("tau", format!("{} is outside [-1, 1]", self.tau)));
        }
        if self.max_nodes == 0 {
            return Err(ConfigError::invalid("max_nodes", "must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(ConfigError::invalid("top_k", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(ConfigError::invalid("workers", "must be at least 1"));
        }
        if self.max_steps == 0 {
            return Err(ConfigError::invalid("max_steps", "must be at least 1"));
        }
        if self.cap_per_size == Some(0) {
            return Err(ConfigError::invalid("cap_per_size", "must be at least 1 when set"));
        }
        if self.env.kind == EnvKind::Rest && self.env.base_url.is_none() {
            return Err(ConfigError::invalid("env.base_url", "required when env.kind is \"rest\""));
        }
        if self.provider.embedder == EmbedderKind::Openai && self.provider.embedding_dimension == 0 {
            return Err(ConfigError::invalid("provider.embedding_dimension", "must be at least 1"));
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.paths.cache_dir.clone().unwrap_or_else(|| self.paths.out_dir.join("cache"))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c.tau, 0.2);
        assert_eq!(c.top_k, 5);
    }

    #[test]
    fn errors_name_the_field() {
        let e = PipelineConfig::from_toml("tau = 1.5").unwrap_err();
        assert_eq!(e.field(), Some("tau"));
        let e = PipelineConfig::from_toml("max_nodes = 0").unwrap_err();
        assert_eq!(e.field(), Some("max_nodes"));
        let e = PipelineConfig::from_toml("top_k = 0").unwrap_err();
        assert_eq!(e.field(), Some("top_k"));
        let e = PipelineConfig::from_toml("[env]\nkind = \"rest\"").unwrap_err();
        assert_eq!(e.field(), Some("env.base_url"));
        let e = PipelineConfig::from_toml("bogus = 1").unwrap_err();
        assert_eq!(e.field(), Some("bogus"));
    }

    #[test]
    fn nested_tables_parse() {
        let c = PipelineConfig::from_toml("seed = 7\n[provider]\nkind = \"replay\"\n[paths]\nout_dir = \"x\"").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.provider.kind, ProviderKind::Replay);
        assert_eq!(c.cache_dir(), PathBuf::from("x/cache"));
    }
}
