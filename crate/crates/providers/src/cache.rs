//! Embedding cache persisted as JSON lines, keyed by provider tag and the
//! SHA-256 of the text.
//!
//! Lookups take a shared read lock; inserts append one line to the file and
//! then update the map under the write lock, so concurrent workers never
//! interleave partial lines.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use lrexplain_core::embedding::{EmbedError, Embedder, EmbeddingVector};
use lrexplain_core::json;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ProviderError;

#[derive(Serialize, Deserialize)]
struct CacheLine {
    provider_tag: String,
    sha256: String,
    values: Vec<f64>,
}

pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Default cache location for a manifest: `<manifest>.embeddings.jsonl`.
pub fn cache_path_for(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".embeddings.jsonl");
    manifest.with_file_name(name)
}

type Key = (String, String);

pub struct EmbeddingCache {
    path: PathBuf,
    entries: RwLock<HashMap<Key, Vec<f64>>>,
    file: Mutex<File>,
}

impl EmbeddingCache {
    /// Opens or creates the cache file and loads its entries. A torn final
    /// line left by an interrupted run is cut off the file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| ProviderError::Cache(format!("{}: {e}", path.display()));
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io(e)),
        };
        let text = String::from_utf8_lossy(&bytes);
        let mut entries = HashMap::new();
        let mut keep = bytes.len();
        let mut offset = 0;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (i, raw) in lines.iter().enumerate() {
            let line = raw.trim();
            let line_start = offset;
            offset += raw.len();
            if line.is_empty() {
                continue;
            }
            match serde_json::from_str::<CacheLine>(line) {
                Ok(c) => {
                    entries.insert((c.provider_tag, c.sha256), c.values);
                }
                Err(_) if i + 1 == lines.len() && !raw.ends_with('\n') => {
                    log::warn!("{}: dropping incomplete last line", path.display());
                    keep = line_start;
                }
                Err(e) => {
                    return Err(ProviderError::Cache(format!(
                        "{} line {}: {e}",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        if keep < bytes.len() {
            file.set_len(keep as u64).map_err(io)?;
        }
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, provider_tag: &str, text: &str) -> Option<EmbeddingVector> {
        let key = (provider_tag.to_string(), content_hash(text));
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        entries
            .get(&key)
            .and_then(|v| EmbeddingVector::new(v.clone(), provider_tag).ok())
    }

    pub fn insert(&self, text: &str, vector: &EmbeddingVector) -> Result<(), ProviderError> {
        let line = CacheLine {
            provider_tag: vector.provider_tag().to_string(),
            sha256: content_hash(text),
            values: vector.values().to_vec(),
        };
        let mut encoded = json::to_line(&line).map_err(|e| ProviderError::Cache(e.to_string()))?;
        encoded.push('\n');
        {
            let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
            f.write_all(encoded.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| ProviderError::Cache(format!("{}: {e}", self.path.display())))?;
        }
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert((line.provider_tag, line.sha256), line.values);
        Ok(())
    }
}

/// Embedder that consults the cache before delegating.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Arc<EmbeddingCache>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E, cache: Arc<EmbeddingCache>) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn provider_tag(&self) -> &str {
        self.inner.provider_tag()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if let Some(v) = self.cache.get(self.inner.provider_tag(), text) {
            return Ok(v);
        }
        let v = self.inner.embed(text)?;
        self.cache.insert(text, &v)?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::OfflineHashEmbedder;

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let v = OfflineHashEmbedder.embed_text("hello there").unwrap();
        {
            let c = EmbeddingCache::open(&path).unwrap();
            assert!(c.get(v.provider_tag(), "hello there").is_none());
            c.insert("hello there", &v).unwrap();
        }
        let c = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get(v.provider_tag(), "hello there").unwrap(), v);
        assert!(c.get("other-tag", "hello there").is_none());
    }

    #[test]
    fn torn_last_line_is_dropped_and_appends_continue() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let v = OfflineHashEmbedder.embed_text("a").unwrap();
        {
            let c = EmbeddingCache::open(&path).unwrap();
            c.insert("a", &v).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"provider_tag\":\"x\",\"sha").unwrap();
        drop(f);
        let c = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        c.insert("b", &OfflineHashEmbedder.embed_text("b").unwrap()).unwrap();
        let c = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(EmbeddingCache::open(&path), Err(ProviderError::Cache(_))));
    }

    #[test]
    fn default_location() {
        assert_eq!(
            cache_path_for(Path::new("/d/test.jsonl")),
            PathBuf::from("/d/test.jsonl.embeddings.jsonl")
        );
    }
}
