//! Error type shared by every module of the crate.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Array or grid dimensions do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// Input values violate a data invariant (non-finite entries, negative
    /// concentrations, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),
    /// Row/column/frequency index outside the valid range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    /// A configuration value is out of its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Metric is undefined for the given reference (e.g. all-zero ground truth).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),
    /// Caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// On-disk format problem: bad magic, version, checksum or payload size.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
