//! Error type shared by all core operations.

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Non-finite or malformed numeric input.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A class label outside the configured range.
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    /// Inconsistent configuration (dimensions, flags, missing fields).
    #[error("configuration error: {0}")]
    Config(String),
    /// External data that cannot be joined to the manifest.
    #[error("ingestion error: {0}")]
    Ingestion(String),
    /// A metric that is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// Training produced non-finite values; the run is aborted.
    #[error("numerical divergence: {0}")]
    Divergence(String),
}

pub type Result<T> = core::result::Result<T, Error>;
