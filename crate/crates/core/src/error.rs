use thiserror::Error;

/// Errors surfaced by tensor ops, model construction, data generation and
/// checkpoint io. String payloads carry enough context to act on; callers
/// match on the variant.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Shapes disagree with what the op requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A scalar argument is outside its valid range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// backward() was already run on this tape.
    #[error("tape already consumed by backward()")]
    ConsumedTape,

    /// backward() called on a non-scalar or non-differentiable root.
    #[error("backward root must be a scalar that requires grad: {0}")]
    BadBackwardRoot(String),

    /// Numeric breakdown that has no sensible recovery (zero-norm
    /// normalisation, NaN loss).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Checkpoint / archive parse or consistency failure.
    #[error("archive error: {0}")]
    Archive(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
