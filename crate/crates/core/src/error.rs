//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants mirror the failure classes of the
/// public operations: file parsing, value validation, unknown symbols,
/// mathematical domain violations, and diverging optimization runs.
#[derive(Debug, Error)]
pub enum Error {
    /// A file or byte stream did not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A value violated a structural invariant (non-finite entries,
    /// dimension mismatches, gaps in an alignment, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A symbol is not part of the phoneme inventory.
    #[error("vocabulary error: unknown symbol {0:?}")]
    Vocabulary(String),

    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An optimization loop produced a non-finite objective. Carries the
    /// objective trace up to the failing step.
    #[error("training error at step {step}: {message}")]
    Training {
        step: usize,
        message: String,
        trace: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
