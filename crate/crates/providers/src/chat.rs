//! Explanation generation over a chat-completion endpoint.

use std::sync::Arc;
use std::time::Duration;

use lrexplain_core::prompts::RenderedPrompt;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::client::{join_url, ApiClient, RetryPolicy};
use crate::credentials;
use crate::error::ProviderError;
use crate::throttle::{Clock, RateLimiter};
use crate::transport::{HttpTransport, UreqTransport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: usize,
    pub timeout_secs: f64,
    pub requests_per_minute: usize,
    pub max_tokens: Option<u32>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model_name: String::new(),
            temperature: 0.7,
            max_retries: 3,
            timeout_secs: 120.0,
            requests_per_minute: 60,
            max_tokens: None,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: String| Err(ProviderError::Config(m));
        if self.base_url.trim().is_empty() {
            return bad("generation base_url is not set".into());
        }
        if self.model_name.trim().is_empty() {
            return bad("generation model_name is not set".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} is outside [0, 2]", self.temperature));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad(format!("timeout {} must be positive", self.timeout_secs));
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be positive".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

pub struct ChatClient {
    cfg: GenerationConfig,
    api: ApiClient,
}

impl ChatClient {
    pub fn new(
        cfg: GenerationConfig,
        transport: Arc<dyn HttpTransport>,
        api_key: impl Into<String>,
        limiter: Arc<RateLimiter>,
    ) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let api = ApiClient::new(transport, api_key)
            .with_retry(RetryPolicy {
                max_retries: cfg.max_retries,
                ..RetryPolicy::default()
            })
            .with_limiter(limiter);
        Ok(Self { cfg, api })
    }

    /// Client over the real network, keyed from `LREXPLAIN_API_KEY`. Fails
    /// before any request if the key is missing.
    pub fn from_env(cfg: GenerationConfig, limiter: Arc<RateLimiter>) -> Result<Self, ProviderError> {
        let transport = Arc::new(UreqTransport::new(cfg.timeout()));
        Self::from_lookup(cfg, transport, limiter, |v| std::env::var(v).ok())
    }

    /// Resolves the API key through `lookup` (environment-style names).
    pub fn from_lookup<F>(
        cfg: GenerationConfig,
        transport: Arc<dyn HttpTransport>,
        limiter: Arc<RateLimiter>,
        lookup: F,
    ) -> Result<Self, ProviderError>
    where
        F: Fn(&str) -> Option<String>,
    {
        let key = credentials::resolve_key(lookup, credentials::GENERATION_KEY_VAR, &[])?;
        Self::new(cfg, transport, key, limiter)
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.api = self.api.with_clock(clock);
        self
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.cfg
    }

    /// Request body: system prompt, then the user prompt followed by the two
    /// face images as URL references.
    pub fn request_body(&self, prompt: &RenderedPrompt, images: (&str, &str)) -> Value {
        let mut body = json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": [
                    {"type": "text", "text": prompt.user},
                    {"type": "image_url", "image_url": {"url": images.0}},
                    {"type": "image_url", "image_url": {"url": images.1}},
                ]},
            ],
        });
        if let Some(m) = self.cfg.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    /// Returns the text of the first completion.
    pub fn generate_explanation(
        &self,
        prompt: &RenderedPrompt,
        images: (&str, &str),
    ) -> Result<String, ProviderError> {
        let url = join_url(&self.cfg.base_url, "chat/completions");
        let resp = self.api.post(&url, self.request_body(prompt, images))?;
        completion_text(&resp)
    }
}

fn completion_text(resp: &Value) -> Result<String, ProviderError> {
    let content = resp
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ProviderError::MalformedResponse("no choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        other => {
            return Err(ProviderError::MalformedResponse(format!(
                "unexpected content type: {other}"
            )))
        }
    };
    if text.trim().is_empty() {
        return Err(ProviderError::MalformedResponse("completion text is empty".into()));
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let ok = GenerationConfig {
            base_url: "http://x".into(),
            model_name: "m".into(),
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.temperature, 0.7);
        for bad in [
            GenerationConfig { temperature: 2.5, ..ok.clone() },
            GenerationConfig { temperature: -0.1, ..ok.clone() },
            GenerationConfig { base_url: "".into(), ..ok.clone() },
            GenerationConfig { requests_per_minute: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(ProviderError::Config(_))));
        }
    }

    #[test]
    fn completion_extraction() {
        let v = json!({"choices": [{"message": {"content": "Match Verdict: Match"}}]});
        assert_eq!(completion_text(&v).unwrap(), "Match Verdict: Match");
        let v = json!({"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]});
        assert_eq!(completion_text(&v).unwrap(), "ab");
        assert!(matches!(completion_text(&json!({"choices": []})), Err(ProviderError::MalformedResponse(_))));
        let v = json!({"choices": [{"message": {"content": "  "}}]});
        assert!(matches!(completion_text(&v), Err(ProviderError::MalformedResponse(_))));
    }
}
