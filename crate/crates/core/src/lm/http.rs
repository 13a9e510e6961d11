//! Blocking HTTP client for an OpenAI-compatible completions endpoint.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{CompletionRequest, CompletionResponse};
use super::{CompletionBackend, GatewayError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Transient(String),
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            api_key,
            retry,
            client,
        })
    }

    /// Reads the API key from the named environment variable, if set.
    pub fn from_env(
        endpoint: impl Into<String>,
        api_key_env: &str,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        Self::new(endpoint, std::env::var(api_key_env).ok(), retry, timeout)
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResponse, Attempt> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| Attempt::Transient(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GatewayError::Rejected {
                status: status.as_u16(),
                body,
            }));
        }
        serde_json::from_str(&body)
            .map_err(|e| Attempt::Fatal(GatewayError::MalformedResponse(e.to_string())))
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => {
                    log::warn!("completion request failed (attempt {}): {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(GatewayError::GatewayUnavailable(format!(
            "{} attempts failed, last: {last}",
            self.retry.max_retries + 1
        )))
    }
}
