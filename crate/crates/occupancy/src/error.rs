use thiserror::Error;

/// Errors raised by the library.
///
/// The CLI maps these onto exit codes: `InvalidArgument`,
/// `PreconditionViolation` and `DegenerateInput` exit with 2,
/// `ResourceLimit` with 3, everything else with 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violation: {0}")]
    PreconditionViolation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("numeric tolerance: {0}")]
    NumericTolerance(String),

    #[error("internal invariant violation: {0}")]
    InternalInvariant(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
