use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
}

/// Blocking request/response channel to the model endpoint.
pub trait Transport: Sync {
    /// POSTs `body` as JSON and returns the raw response text.
    fn post(&self, url: &str, body: &Value, api_key: Option<&str>) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, body: &Value, api_key: Option<&str>) -> Result<String, TransportError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(t) => TransportError::Timeout(t.to_string()),
            other => TransportError::Network(other.to_string()),
        };
        let mut resp = req.send(body.to_string()).map_err(map_err)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_err)?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Http { status, body: text });
        }
        Ok(text)
    }
}
