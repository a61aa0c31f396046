//! Blocking JSON-over-HTTP client shared by the remote backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("label {0:?} is not in the label set")]
    OutOfSetLabel(String),
    #[error("{0}")]
    Failed(String),
}

impl BackendError {
    /// Transport failures, 429 and 5xx responses are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Where a remote backend lives. The auth token is read from the named
/// environment variable at call time and sent as a bearer token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            auth_env: None,
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn with_auth_env(mut self, var: impl Into<String>) -> Self {
        self.auth_env = Some(var.into());
        self
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    config: EndpointConfig,
}

impl JsonClient {
    pub fn new(config: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient { agent, config }
    }

    pub fn url(&self) -> &str {
        &self.config.url
    }

    pub fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let mut request = self.agent.post(&self.config.url);
        if let Some(var) = &self.config.auth_env {
            let token = std::env::var(var)
                .map_err(|_| BackendError::Failed(format!("auth environment variable {var} is not set")))?;
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status { status, body });
        }
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| BackendError::Schema(format!("response is not JSON: {e}")))
    }
}
