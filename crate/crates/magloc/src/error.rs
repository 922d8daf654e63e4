//! Crate-wide error type.

use thiserror::Error;

/// All fallible operations in this crate return [`Result`].
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A documented precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid or inconsistent configuration.
    #[error("invalid config: {0}")]
    Config(String),

    /// Failure while reading an input dataset.
    #[error("ingestion error: {0}")]
    Ingest(String),

    /// A dataset is unusable downstream (empty split, no windows, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint file is malformed or does not match the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Non-finite loss or another numerical breakdown.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Shape(_) => 1,
            Error::Ingest(_) | Error::Data(_) | Error::Checkpoint(_) | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Numeric(_) => 3,
        }
    }

    /// Short machine-parsable tag used in CLI diagnostics.
    pub fn kind_tag(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Ingest(_) => "ingest",
            Error::Data(_) => "data",
            Error::Checkpoint(_) => "checkpoint",
            Error::Numeric(_) => "numeric",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
