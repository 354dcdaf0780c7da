use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid model, prior or sampler configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A moment was requested for a distribution without one.
    #[error("infinite variance: {0}")]
    InfiniteVariance(String),

    /// A data file could not be parsed; `line` is 1-based and includes the header.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
