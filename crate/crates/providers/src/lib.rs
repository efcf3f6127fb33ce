//! Clients for the external services behind lrexplain: a chat-completion
//! endpoint that writes explanations and an embedding endpoint that encodes
//! them, plus a deterministic offline embedder, an on-disk embedding cache
//! and batched embedding.
//!
//! Network access goes through [`HttpTransport`], so every client can be
//! driven by a scripted transport in tests.

pub mod batch;
pub mod cache;
pub mod chat;
pub mod client;
pub mod credentials;
pub mod embed;
pub mod error;
pub mod throttle;
pub mod transport;

pub use batch::{embed_batch, BatchError, ParallelEmbedder};
pub use cache::{CachedEmbedder, EmbeddingCache};
pub use chat::{ChatClient, GenerationConfig};
pub use client::{ApiClient, RetryPolicy};
pub use embed::{EmbeddingConfig, OfflineHashEmbedder, RemoteEmbedder};
pub use error::ProviderError;
pub use throttle::{Clock, RateLimiter, SystemClock};
pub use transport::{HttpRequest, HttpResponse, HttpTransport, TransportError, UreqTransport};
