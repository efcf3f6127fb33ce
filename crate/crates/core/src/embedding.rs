//! Embedding vectors and the embedding-backend abstraction.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding has no values")]
    Empty,
    #[error("embedding entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("embedding provider tag is empty")]
    EmptyProviderTag,
}

/// Fixed-dimension real vector produced by one embedding provider.
///
/// The provider tag travels with the values: vectors from different
/// providers live in different spaces and must never be mixed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_tag: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_tag: impl Into<String>) -> Result<Self, EmbeddingError> {
        let provider_tag = provider_tag.into();
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if provider_tag.is_empty() {
            return Err(EmbeddingError::EmptyProviderTag);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index, value });
        }
        Ok(Self {
            values,
            provider_tag,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; `None` when either vector is zero or dimensions differ.
    pub fn cosine_similarity(&self, other: &EmbeddingVector) -> Option<f64> {
        if self.dim() != other.dim() {
            return None;
        }
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return None;
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Some(dot / (na * nb))
    }
}

/// Error type returned by embedding backends.
pub type EmbedError = Box<dyn std::error::Error + Send + Sync>;

/// A frozen text-embedding model.
pub trait Embedder: Send + Sync {
    /// Identifies the embedding space. Vectors are only comparable when
    /// their tags are equal.
    fn provider_tag(&self) -> &str;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    /// Embeds several texts, one outcome per input in input order.
    fn embed_many(&self, texts: &[&str]) -> Vec<Result<EmbeddingVector, EmbedError>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn provider_tag(&self) -> &str {
        (**self).provider_tag()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }

    fn embed_many(&self, texts: &[&str]) -> Vec<Result<EmbeddingVector, EmbedError>> {
        (**self).embed_many(texts)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn provider_tag(&self) -> &str {
        (**self).provider_tag()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }

    fn embed_many(&self, texts: &[&str]) -> Vec<Result<EmbeddingVector, EmbedError>> {
        (**self).embed_many(texts)
    }
}
