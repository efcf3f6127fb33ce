//! Text embedders: a deterministic feature-hashing embedder for offline
//! work and a client for a remote embedding endpoint.

use std::sync::Arc;
use std::time::Duration;

use lrexplain_core::embedding::{EmbedError, Embedder, EmbeddingVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::client::{join_url, ApiClient, RetryPolicy};
use crate::credentials;
use crate::error::ProviderError;
use crate::throttle::{Clock, RateLimiter};
use crate::transport::{HttpTransport, UreqTransport};

pub const OFFLINE_DIM: usize = 512;
pub const OFFLINE_TAG: &str = "offline-hash-512";
const HASHES_PER_TOKEN: usize = 3;

/// Feature-hashing embedder.
///
/// Text is split on non-alphanumeric characters and lowercased. Each token's
/// SHA-256 digest supplies three indices (bytes `4j..4j+4` as a big-endian
/// `u32`, mod 512) and three signs (low bit of byte `12 + j`: set means
/// `-1`). The signed one-hot contributions are summed over tokens and the
/// result is scaled to unit length.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineHashEmbedder;

impl OfflineHashEmbedder {
    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut v = vec![0.0f64; OFFLINE_DIM];
        let mut tokens = 0usize;
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            tokens += 1;
            let digest = Sha256::digest(token.to_lowercase().as_bytes());
            for j in 0..HASHES_PER_TOKEN {
                let b = &digest[4 * j..4 * j + 4];
                let idx = u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize % OFFLINE_DIM;
                let sign = if digest[12 + j] & 1 == 1 { -1.0 } else { 1.0 };
                v[idx] += sign;
            }
        }
        if tokens == 0 {
            return Err(ProviderError::EmptyText);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ProviderError::MalformedResponse(
                "hashed features cancel to the zero vector".into(),
            ));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(EmbeddingVector::new(v, OFFLINE_TAG).expect("unit vector is finite and tagged"))
    }
}

impl Embedder for OfflineHashEmbedder {
    fn provider_tag(&self) -> &str {
        OFFLINE_TAG
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_text(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub base_url: String,
    pub model_name: String,
    /// Expected vector length; inferred for well-known models when unset.
    pub dimensions: Option<usize>,
    pub max_retries: usize,
    pub timeout_secs: f64,
    pub requests_per_minute: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model_name: "text-embedding-3-small".into(),
            dimensions: None,
            max_retries: 3,
            timeout_secs: 60.0,
            requests_per_minute: 600,
        }
    }
}

/// Output length of well-known embedding models.
pub fn known_dimension(model: &str) -> Option<usize> {
    match model {
        "text-embedding-3-small" | "text-embedding-ada-002" => Some(1536),
        "text-embedding-3-large" => Some(3072),
        _ => None,
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.base_url.trim().is_empty() {
            return Err(ProviderError::Config("embedding base_url is not set".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(ProviderError::Config("embedding model_name is not set".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ProviderError::Config(format!("timeout {} must be positive", self.timeout_secs)));
        }
        if self.requests_per_minute == 0 {
            return Err(ProviderError::Config("requests_per_minute must be positive".into()));
        }
        Ok(())
    }

    pub fn expected_dimension(&self) -> Option<usize> {
        self.dimensions.or_else(|| known_dimension(&self.model_name))
    }

    /// Provider tag identifying the embedding space.
    pub fn provider_tag(&self) -> String {
        format!("remote:{}", self.model_name)
    }
}

pub struct RemoteEmbedder {
    cfg: EmbeddingConfig,
    tag: String,
    api: ApiClient,
}

impl RemoteEmbedder {
    pub fn new(
        cfg: EmbeddingConfig,
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
        Ok(Self {
            tag: cfg.provider_tag(),
            cfg,
            api,
        })
    }

    /// Client over the real network, keyed from `LREXPLAIN_EMBED_API_KEY`
    /// or, failing that, `LREXPLAIN_API_KEY`.
    pub fn from_env(cfg: EmbeddingConfig, limiter: Arc<RateLimiter>) -> Result<Self, ProviderError> {
        let transport = Arc::new(UreqTransport::new(Duration::from_secs_f64(cfg.timeout_secs)));
        Self::from_lookup(cfg, transport, limiter, |v| std::env::var(v).ok())
    }

    /// Resolves the API key through `lookup` (environment-style names).
    pub fn from_lookup<F>(
        cfg: EmbeddingConfig,
        transport: Arc<dyn HttpTransport>,
        limiter: Arc<RateLimiter>,
        lookup: F,
    ) -> Result<Self, ProviderError>
    where
        F: Fn(&str) -> Option<String>,
    {
        let key = credentials::resolve_key(
            lookup,
            credentials::EMBEDDING_KEY_VAR,
            &[credentials::GENERATION_KEY_VAR],
        )?;
        Self::new(cfg, transport, key, limiter)
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.api = self.api.with_clock(clock);
        self
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let mut body = json!({"model": self.cfg.model_name, "input": text});
        if let Some(d) = self.cfg.dimensions {
            body["dimensions"] = json!(d);
        }
        let resp = self.api.post(&join_url(&self.cfg.base_url, "embeddings"), body)?;
        let values = parse_embedding(&resp)?;
        if let Some(d) = self.cfg.expected_dimension() {
            if values.len() != d {
                return Err(ProviderError::MalformedResponse(format!(
                    "expected {d} dimensions, got {}",
                    values.len()
                )));
            }
        }
        EmbeddingVector::new(values, self.tag.clone())
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))
    }
}

fn parse_embedding(resp: &Value) -> Result<Vec<f64>, ProviderError> {
    let arr = resp
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::MalformedResponse("no data[0].embedding array".into()))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| ProviderError::MalformedResponse(format!("non-numeric entry {x}")))
        })
        .collect()
}

impl Embedder for RemoteEmbedder {
    fn provider_tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_text(text)?)
    }
}
