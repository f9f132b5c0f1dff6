use thiserror::Error;

/// Errors raised by the solvers and model builders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("negative probability {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} is identically zero")]
    DegenerateRow { row: usize },
    #[error("row {row} sums to {sum}, outside 1 +/- 1e-9")]
    RowSum { row: usize, sum: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("index {index} out of range for {len} states")]
    OutOfRange { index: usize, len: usize },
    #[error("triangle inequality fails: c({x},{y}) = {lhs} > c({x},{z}) + c({z},{y}) = {rhs}")]
    TriangleViolation {
        x: usize,
        y: usize,
        z: usize,
        lhs: f64,
        rhs: f64,
    },
    #[error("cost c({x},{target}) = {value} is below the floor c0 = {c0}")]
    CostFloor {
        x: usize,
        target: usize,
        value: f64,
        c0: f64,
    },
    #[error("tilted operator is not primitive (reducible or periodic)")]
    NotPrimitive,
    #[error("power iteration did not converge in {iterations} iterations (gap {gap:e})")]
    PowerIteration { iterations: usize, gap: f64 },
    #[error("span iteration did not contract in {iterations} iterations (span {span:e}, minorization a = {minorization})")]
    NoConvergence {
        iterations: usize,
        span: f64,
        minorization: f64,
    },
    #[error("fixed-point residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error("instance too large for exhaustive enumeration: {paths} paths > {limit}")]
    InstanceTooLarge { paths: u128, limit: u128 },
    #[error("horizon {horizon} is not a multiple of the step {delta}")]
    GridMisaligned { horizon: f64, delta: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{what} is not monotone at index {index} (excess {excess:e})")]
    Monotonicity {
        what: &'static str,
        index: usize,
        excess: f64,
    },
    #[error("policy rejected: {0}")]
    RejectedPolicy(String),
    #[error("state {state}: reflected mass {mass} exceeds one half")]
    FoldExceeded { state: usize, mass: f64 },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
