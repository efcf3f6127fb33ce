use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("missing credential: set {0}")]
    MissingCredential(String),
    #[error("authentication rejected (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: usize },
    #[error("service unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: usize, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("text to embed is empty")]
    EmptyText,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("embedding cache error: {0}")]
    Cache(String),
}

impl ProviderError {
    /// Whether the failure is an authentication or credential problem.
    pub fn is_auth(&self) -> bool {
        matches!(self, ProviderError::MissingCredential(_) | ProviderError::Auth { .. })
    }
}
