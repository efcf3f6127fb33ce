//! Picks the embedder that reproduces a given embedding space.

use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use lrexplain_core::embedding::Embedder;
use lrexplain_core::synth::SYNTH_PROVIDER_TAG;
use lrexplain_providers::cache::{cache_path_for, CachedEmbedder, EmbeddingCache};
use lrexplain_providers::embed::{EmbeddingConfig, OfflineHashEmbedder, RemoteEmbedder, OFFLINE_TAG};
use lrexplain_providers::{ParallelEmbedder, RateLimiter};

use crate::error::usage;

pub const REMOTE_PREFIX: &str = "remote:";

/// Embedder by kind name (`offline` or `remote`). Remote embedders cache
/// results beside `manifest`.
pub fn by_kind(
    kind: &str,
    cfg: &EmbeddingConfig,
    manifest: &Path,
    parallelism: usize,
) -> anyhow::Result<Box<dyn Embedder>> {
    match kind {
        "offline" => Ok(Box::new(ParallelEmbedder::new(OfflineHashEmbedder, parallelism))),
        "remote" => {
            let limiter = Arc::new(RateLimiter::per_minute(cfg.requests_per_minute.max(1)));
            let remote = RemoteEmbedder::from_env(cfg.clone(), limiter)?;
            let cache = Arc::new(EmbeddingCache::open(cache_path_for(manifest))?);
            Ok(Box::new(ParallelEmbedder::new(CachedEmbedder::new(remote, cache), parallelism)))
        }
        other => Err(usage(format!("unknown embedder {other:?} (expected offline or remote)"))),
    }
}

/// Embedder matching `provider_tag`, or `None` when the space cannot be
/// reproduced from text (synthetic vectors).
pub fn for_tag(
    provider_tag: &str,
    cfg: &EmbeddingConfig,
    manifest: &Path,
    parallelism: usize,
) -> anyhow::Result<Option<Box<dyn Embedder>>> {
    if provider_tag == OFFLINE_TAG {
        return by_kind("offline", cfg, manifest, parallelism).map(Some);
    }
    if let Some(model) = provider_tag.strip_prefix(REMOTE_PREFIX) {
        let cfg = EmbeddingConfig {
            model_name: model.to_string(),
            ..cfg.clone()
        };
        return by_kind("remote", &cfg, manifest, parallelism)
            .map(Some)
            .with_context(|| format!("building embedder for {provider_tag}"));
    }
    if provider_tag != SYNTH_PROVIDER_TAG {
        log::warn!("no embedder reproduces provider tag {provider_tag:?}");
    }
    Ok(None)
}
