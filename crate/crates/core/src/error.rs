use thiserror::Error;

/// Errors raised while building or validating problems and solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in block {block}: expected length {expected}, found {found}")]
    Shape {
        block: usize,
        expected: usize,
        found: usize,
    },

    #[error("block count mismatch: expected {expected} blocks, found {found}")]
    BlockCount { expected: usize, found: usize },

    #[error("preconditioner entry {value} is not strictly positive and finite")]
    NotPositive { value: f64 },

    #[error(
        "power iteration did not converge after {iterations} iterations \
         (last Rayleigh quotients {previous:e}, {last:e})"
    )]
    NormEstimate {
        iterations: usize,
        previous: f64,
        last: f64,
    },

    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible constants: {0}")]
    Infeasible(String),

    #[error("reference oracle did not converge after {iterations} iterations (last change {change:e})")]
    OracleNotConverged { iterations: usize, change: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
