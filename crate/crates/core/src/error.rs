use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A distribution or model parameter violates its constraints.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The requested divergence order is outside the valid region for the
    /// family pair (e.g. a blended parameter became non-positive).
    #[error("divergence order out of range: {0}")]
    OrderOutOfRange(String),

    /// The operation is not defined for this model (e.g. Fisher information
    /// of a non-regular model, or a missing closed-form predictive).
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Data fails a model precondition.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A numerical routine aborted (too many non-finite values, failed
    /// bracketing, divergent optimisation).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Dataset ingestion failed.
    #[error("dataset error: {0}")]
    Dataset(String),
}
