//! Crate-wide error type.

/// Errors produced by scoring, fitting, and I/O operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a precondition (non-finite values, wrong domain, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A vector whose L2 norm is below the zero threshold where a direction
    /// is required (normalization, cosine distance).
    #[error("degenerate vector: L2 norm {norm:e} is below threshold {threshold:e}")]
    DegenerateVector { norm: f64, threshold: f64 },

    /// Mismatched dimensions or lengths between operands.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation requiring at least two ensemble members got fewer.
    #[error("ensemble too small: need at least 2 members, got {0}")]
    EnsembleTooSmall(usize),

    /// A numeric parameter outside its allowed range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Score vectors with different polarities cannot be averaged.
    #[error("polarity mismatch: {0}")]
    Polarity(String),

    /// A downstream task slice is unusable (e.g. a class has no samples).
    #[error("task data error: {0}")]
    TaskData(String),

    /// A file does not parse as any supported format.
    #[error("format error: {0}")]
    Format(String),

    /// A file parses structurally but its payload is short or inconsistent.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// A file parses but carries values the domain types reject.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Rank correlation is undefined (an input is constant).
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
