//! Service configuration file and backend construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use radassist_core::completion::rules::RuleFile;
use radassist_core::{Backend, RuleBackend};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paced::Paced;
use crate::remote::{RemoteBackend, RemoteConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    #[serde(default = "default_host")]
    pub host: String,
    /// 0 picks a free port.
    #[serde(default = "default_port")]
    pub port: u16,
}

fn default_host() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: default_host(),
            port: default_port(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Rule,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub rules_path: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub timeout_s: Option<f64>,
    /// Artificial delay before each token; useful for demos and for
    /// exercising cancellation against the instant rule backend.
    #[serde(default)]
    pub token_delay_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionConfig {
    #[serde(default = "default_max_tokens")]
    pub max_tokens_default: u32,
}

fn default_max_tokens() -> u32 {
    64
}

impl Default for SuggestionConfig {
    fn default() -> Self {
        Self {
            max_tokens_default: default_max_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub server: ServerConfig,
    pub data_dir: PathBuf,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub suggestion: SuggestionConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config: Config =
            serde_json::from_slice(&bytes).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        if config.data_dir.is_relative() {
            config.data_dir = base.join(&config.data_dir);
        }
        if let Some(rules) = config.backend.rules_path.as_mut().filter(|p| p.is_relative()) {
            *rules = base.join(&*rules);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.suggestion.max_tokens_default == 0 {
            return Err(ConfigError::Invalid("suggestion.max_tokens_default must be at least 1".into()));
        }
        self.backend.validate()
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(t) = self.timeout_s {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::Invalid("backend.timeout_s must be positive".into()));
            }
        }
        if self.kind == BackendKind::Remote {
            for (name, v) in [("base_url", &self.base_url), ("model", &self.model)] {
                if v.as_deref().is_none_or(str::is_empty) {
                    return Err(ConfigError::Invalid(format!("remote backend needs backend.{name}")));
                }
            }
        }
        Ok(())
    }

    /// Builds the configured backend. Remote credentials are read from the
    /// environment variable named by `api_key_env`.
    pub fn build(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        self.validate()?;
        let backend: Arc<dyn Backend> = match self.kind {
            BackendKind::Rule => {
                let rules = match &self.rules_path {
                    Some(path) => {
                        let bytes = std::fs::read(path).map_err(|source| ConfigError::Read {
                            path: path.clone(),
                            source,
                        })?;
                        RuleBackend::from_json(&bytes).map_err(|e| ConfigError::Invalid(e.to_string()))?
                    }
                    None => RuleBackend::new(&RuleFile::kidney_default()).expect("built-in rules compile"),
                };
                Arc::new(rules)
            }
            BackendKind::Remote => {
                let api_key = match &self.api_key_env {
                    Some(var) => Some(
                        std::env::var(var)
                            .ok()
                            .filter(|v| !v.is_empty())
                            .ok_or_else(|| ConfigError::MissingCredential(var.clone()))?,
                    ),
                    None => None,
                };
                Arc::new(RemoteBackend::new(RemoteConfig {
                    base_url: self.base_url.clone().unwrap_or_default(),
                    model: self.model.clone().unwrap_or_default(),
                    api_key,
                    timeout: Duration::from_secs_f64(self.timeout_s.unwrap_or(30.0)),
                    ..RemoteConfig::default()
                }))
            }
        };
        Ok(match self.token_delay_ms {
            Some(ms) if ms > 0 => Arc::new(Paced::new(backend, Duration::from_millis(ms))),
            _ => backend,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c: Config = serde_json::from_str(r#"{"data_dir":"data"}"#).unwrap();
        assert_eq!(c.server.port, 8080);
        assert_eq!(c.backend.kind, BackendKind::Rule);
        assert_eq!(c.suggestion.max_tokens_default, 64);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn remote_needs_url_and_model() {
        let b = BackendConfig {
            kind: BackendKind::Remote,
            model: Some("m".into()),
            ..BackendConfig::default()
        };
        assert!(matches!(b.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn missing_credential() {
        let b = BackendConfig {
            kind: BackendKind::Remote,
            base_url: Some("http://127.0.0.1:9".into()),
            model: Some("m".into()),
            api_key_env: Some("RADASSIST_TEST_SURELY_UNSET_KEY".into()),
            ..BackendConfig::default()
        };
        assert!(matches!(b.build(), Err(ConfigError::MissingCredential(_))));
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"data_dir":"d","backend":{"kind":"rule","token_delay_ms":5}}"#).unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.data_dir, dir.path().join("d"));
        assert_eq!(c.backend.build().unwrap().name(), "rule");
    }
}
