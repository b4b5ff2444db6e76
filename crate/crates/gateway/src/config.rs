use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const ENV_API_KEY: &str = "ANCHORVIEW_LLM_API_KEY";
pub const ENV_ENDPOINT: &str = "ANCHORVIEW_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "ANCHORVIEW_LLM_MODEL";
pub const ENV_PROMPT_DIR: &str = "ANCHORVIEW_PROMPT_DIR";

/// Endpoint settings. The API key is read from the environment only and is
/// never serialized or printed.
#[derive(Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub endpoint: String,
    pub model: String,
    /// Per-call timeout, seconds.
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Directory holding `intent.txt` / `score.txt`; built-in text otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl fmt::Debug for GatewayConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GatewayConfig")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("timeout_secs", &self.timeout_secs)
            .field("max_retries", &self.max_retries)
            .field("prompt_dir", &self.prompt_dir)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl GatewayConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_secs: 60.0,
            max_retries: 2,
            prompt_dir: None,
            api_key: None,
        }
    }

    /// Builds a config from environment variables; `None` without an endpoint.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty())?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into());
        let mut cfg = Self::new(endpoint, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        cfg.prompt_dir = std::env::var_os(ENV_PROMPT_DIR).map(PathBuf::from);
        Some(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(format!("timeout must be > 0, got {}", self.timeout_secs));
        }
        if self.endpoint.is_empty() {
            return Err("endpoint is empty".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}
