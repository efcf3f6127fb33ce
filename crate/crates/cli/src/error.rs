//! Exit codes: 0 success, 1 usage, 2 data validation, 3 provider failure.

use std::fmt;

use lrexplain_providers::ProviderError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

/// Marks an error as a usage mistake rather than bad data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Marks a failure caused by an external service.
#[derive(Debug)]
pub struct ProviderFailure(pub String);

impl fmt::Display for ProviderFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ProviderFailure {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub fn provider(message: impl Into<String>) -> anyhow::Error {
    ProviderFailure(message.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<clap::Error>() {
            return EXIT_USAGE;
        }
        if cause.is::<ProviderError>() || cause.is::<ProviderFailure>() {
            return EXIT_PROVIDER;
        }
    }
    EXIT_DATA
}
