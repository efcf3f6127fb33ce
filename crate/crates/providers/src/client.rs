//! Shared request path for both endpoints: throttle, send, classify the
//! status, and retry transient failures with exponential backoff.

use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

use crate::error::ProviderError;
use crate::throttle::{Clock, RateLimiter, SystemClock};
use crate::transport::{HttpRequest, HttpTransport, TransportError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `base · 2^retry`, capped.
    pub fn delay(&self, retry: usize) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(31) as u32);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

enum Attempt {
    Done(Value),
    Retry(String, bool),
    Fail(ProviderError),
}

pub struct ApiClient {
    transport: Arc<dyn HttpTransport>,
    api_key: String,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    clock: Arc<dyn Clock>,
}

impl ApiClient {
    pub fn new(transport: Arc<dyn HttpTransport>, api_key: impl Into<String>) -> Self {
        Self {
            transport,
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            limiter: None,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    fn attempt(&self, request: &HttpRequest) -> Attempt {
        if let Some(l) = &self.limiter {
            l.acquire(self.clock.as_ref());
        }
        let resp = match self.transport.post_json(request) {
            Ok(r) => r,
            Err(TransportError::Timeout) => return Attempt::Retry("timeout".into(), true),
            Err(TransportError::Connection(m)) => return Attempt::Retry(m, false),
        };
        match resp.status {
            200..=299 => match serde_json::from_str(&resp.body) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fail(ProviderError::MalformedResponse(format!(
                    "response body is not JSON: {e}"
                ))),
            },
            401 | 403 => Attempt::Fail(ProviderError::Auth {
                status: resp.status,
                message: truncate(&resp.body),
            }),
            408 | 429 | 500..=599 => {
                Attempt::Retry(format!("HTTP {}: {}", resp.status, truncate(&resp.body)), false)
            }
            status => Attempt::Fail(ProviderError::Http {
                status,
                body: truncate(&resp.body),
            }),
        }
    }

    /// POSTs `body` to `url` with bearer authentication and returns the
    /// parsed JSON response.
    pub fn post(&self, url: &str, body: Value) -> Result<Value, ProviderError> {
        let request = HttpRequest {
            url: url.to_string(),
            headers: vec![
                ("Authorization".into(), format!("Bearer {}", self.api_key)),
                ("Content-Type".into(), "application/json".into()),
            ],
            body,
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&request) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(message, timed_out) => {
                    if attempts > self.retry.max_retries {
                        return Err(if timed_out {
                            ProviderError::Timeout { attempts }
                        } else {
                            ProviderError::Unavailable { attempts, message }
                        });
                    }
                    log::warn!("{url}: {message}; retry {attempts} of {}", self.retry.max_retries);
                    self.clock.sleep(self.retry.delay(attempts - 1));
                }
            }
        }
    }
}

fn truncate(body: &str) -> String {
    const LIMIT: usize = 500;
    match body.char_indices().nth(LIMIT) {
        Some((i, _)) => format!("{}…", &body[..i]),
        None => body.to_string(),
    }
}

/// Joins a base URL and an endpoint path with exactly one slash.
pub fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(1),
        };
        let d: Vec<u128> = (0..6).map(|i| p.delay(i).as_millis()).collect();
        assert_eq!(d, [100, 200, 400, 800, 1000, 1000]);
        assert_eq!(p.delay(1000), Duration::from_secs(1));
    }

    #[test]
    fn url_joining() {
        assert_eq!(join_url("http://h/v1/", "/chat/completions"), "http://h/v1/chat/completions");
        assert_eq!(join_url("http://h/v1", "embeddings"), "http://h/v1/embeddings");
    }
}
