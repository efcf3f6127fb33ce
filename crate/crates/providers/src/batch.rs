//! Order-preserving batch embedding with bounded concurrency.

use std::fmt;

use lrexplain_core::embedding::{EmbedError, Embedder, EmbeddingVector};
use rayon::prelude::*;

/// Per-item outcomes of a batch in which at least one item failed.
#[derive(Debug)]
pub struct BatchError {
    pub outcomes: Vec<Result<EmbeddingVector, String>>,
}

impl BatchError {
    pub fn failed_indices(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_err())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn succeeded(&self) -> Vec<&EmbeddingVector> {
        self.outcomes.iter().filter_map(|o| o.as_ref().ok()).collect()
    }
}

impl fmt::Display for BatchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let failed = self.failed_indices();
        write!(f, "{} of {} embeddings failed", failed.len(), self.outcomes.len())?;
        if let Some(&i) = failed.first() {
            if let Err(e) = &self.outcomes[i] {
                write!(f, " (first at index {i}: {e})")?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for BatchError {}

/// Embeds every text, with at most `parallelism` requests in flight, and
/// returns one outcome per text in input order.
pub fn embed_outcomes<E: Embedder + ?Sized>(
    texts: &[&str],
    embedder: &E,
    parallelism: usize,
) -> Vec<Result<EmbeddingVector, EmbedError>> {
    let workers = parallelism.max(1);
    if workers == 1 || texts.len() <= 1 {
        return texts.iter().map(|t| embedder.embed(t)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| texts.par_iter().map(|t| embedder.embed(t)).collect()),
        Err(e) => {
            log::warn!("could not start {workers} embedding workers ({e}); running sequentially");
            texts.iter().map(|t| embedder.embed(t)).collect()
        }
    }
}

/// Like [`embed_outcomes`] but all-or-report: every vector on success, or a
/// [`BatchError`] listing each item's outcome.
pub fn embed_batch<E: Embedder + ?Sized>(
    texts: &[&str],
    embedder: &E,
    parallelism: usize,
) -> Result<Vec<EmbeddingVector>, BatchError> {
    let outcomes = embed_outcomes(texts, embedder, parallelism);
    if outcomes.iter().all(Result::is_ok) {
        return Ok(outcomes.into_iter().map(|o| o.expect("checked")).collect());
    }
    Err(BatchError {
        outcomes: outcomes.into_iter().map(|o| o.map_err(|e| e.to_string())).collect(),
    })
}

/// Wraps an embedder so that `embed_many` runs with bounded parallelism.
pub struct ParallelEmbedder<E> {
    inner: E,
    parallelism: usize,
}

impl<E: Embedder> ParallelEmbedder<E> {
    pub fn new(inner: E, parallelism: usize) -> Self {
        Self {
            inner,
            parallelism: parallelism.max(1),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Embedder> Embedder for ParallelEmbedder<E> {
    fn provider_tag(&self) -> &str {
        self.inner.provider_tag()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.inner.embed(text)
    }

    fn embed_many(&self, texts: &[&str]) -> Vec<Result<EmbeddingVector, EmbedError>> {
        embed_outcomes(texts, &self.inner, self.parallelism)
    }
}
