//! Blocking JSON POST with a bounded transport retry budget.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub timeout: Duration,
    /// Extra attempts after the first on connection errors, 429 and 5xx.
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

pub(crate) fn client(config: &HttpConfig) -> Result<Client> {
    if config.timeout.is_zero() {
        return Err(Error::Config("timeout must be positive".into()));
    }
    Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| Error::Config(format!("http client: {e}")))
}

fn retryable(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status == StatusCode::REQUEST_TIMEOUT || status.is_server_error()
}

pub(crate) fn post_json<B: Serialize>(
    client: &Client,
    config: &HttpConfig,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<Value> {
    let mut last_error = String::new();
    for attempt in 0..=config.retries {
        if attempt > 0 {
            thread::sleep(config.backoff * 2u32.saturating_pow(attempt - 1));
        }
        let mut req = client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => {
                tracing::debug!(url, attempt, error = %e, "request failed");
                last_error = e.to_string();
                continue;
            }
        };
        let status = resp.status();
        if retryable(status) {
            last_error = format!("HTTP {status}");
            tracing::debug!(url, attempt, %status, "retryable status");
            continue;
        }
        let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Backend(format!("HTTP {status}: {}", text.chars().take(500).collect::<String>())));
        }
        return serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("invalid JSON from {url}: {e}")));
    }
    Err(Error::Transport(format!(
        "{url}: {last_error} (after {} attempts)",
        config.retries + 1
    )))
}
