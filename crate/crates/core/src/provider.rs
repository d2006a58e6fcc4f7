//! Retry policy and the small JSON-over-HTTP client shared by remote providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ProviderError;

pub const API_KEY_ENV: &str = "DENSE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles on each further attempt.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `f`, retrying transport failures with exponential backoff. Other
    /// errors are returned at once.
    pub fn run<T>(&self, provider: &str, mut f: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.attempts.max(1);
        let mut delay = self.base_delay;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match f() {
                Ok(v) => return Ok(v),
                Err(ProviderError::Transport(msg)) => {
                    log::warn!("{provider}: attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts && !delay.is_zero() {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(ProviderError::Unavailable {
            provider: provider.to_string(),
            attempts,
            last,
        })
    }
}

/// Blocking JSON POST client with optional bearer authentication.
#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

impl JsonClient {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.is_empty()),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ProviderError> {
        let url = format!("{}{}", self.base_url, path);
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| ProviderError::Transport(format!("POST {url}: {e}")))?;
        let status = resp.status();
        if status.as_u16() != 200 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError::Transport(format!("POST {url}: HTTP {status}: {}", detail.trim())));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(format!("POST {url}: reading body: {e}")))?;
        serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(format!("POST {url}: {e}")))
    }
}
