use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LewisError {
    #[error("matrix is not positive definite (pivot {pivot} at column {column} below threshold {threshold})")]
    NotPositiveDefinite {
        column: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("non-finite value in {what}")]
    NonFiniteInput { what: &'static str },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix has {rows} rows and {cols} columns; need rows >= cols >= 1")]
    Dimension { rows: usize, cols: usize },
    #[error("row {0} of the matrix is zero")]
    ZeroRow(usize),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("weight {index} is not strictly positive and finite: {value}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("step size {value} at coordinate {index} outside [0, {bound}]")]
    InvalidStepSize { index: usize, value: f64, bound: f64 },
    #[error("rank-one update denominator {denominator} at or below tolerance")]
    DowndateSingular { denominator: f64 },
    #[error("{what} exceeded its iteration cap of {cap}")]
    IterationCapExceeded { what: &'static str, cap: usize },
    #[error("{what} exceeded its time limit of {limit_ms} ms")]
    TimeLimitExceeded { what: &'static str, limit_ms: u128 },
    #[error("could not bracket the coordinate step (rho={rho}, sigma={sigma})")]
    BracketFailure { rho: f64, sigma: f64 },
    #[error("argument outside the domain: {0}")]
    DomainError(String),
    #[error("unsupported p = {p}: {reason}")]
    UnsupportedP { p: f64, reason: &'static str },
    #[error("invariant violated: {0}")]
    InvariantViolated(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("oracle made no progress after {iterations} iterations (residual {residual})")]
    OracleStalled { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, LewisError>;
