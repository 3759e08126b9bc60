use thiserror::Error;

use crate::exprs::{EvalError, ParseError};

/// Failures of the implicit-equation solver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NewtonError {
    #[error("Newton did not converge after {iters} iterations (residual {final_residual:e})")]
    NoConvergence { iters: usize, final_residual: f64 },
    #[error("singular Jacobian at iterate {at:?}")]
    SingularJacobian { at: Vec<f64> },
    #[error("residual evaluation failed: {0}")]
    Residual(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("metric not SPD at q = {q:?}")]
    NotSpd { q: Vec<f64> },
    #[error("regularity failure: matrix singular or condition number {cond:e} exceeds limit")]
    Regularity { cond: f64 },
    #[error("Martinet pole: 1 + beta*x = 0 at x = {x}")]
    Pole { x: f64 },
    #[error("constraint violated by {residual:e} (limit {limit:e})")]
    ConstraintViolation { residual: f64, limit: f64 },
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular multiplier matrix")]
    SingularMultiplier,
    #[error("times must be strictly increasing: {prev} then {next}")]
    NonMonotonicTime { prev: f64, next: f64 },
    #[error("missing trajectory column `{0}`")]
    MissingColumn(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error(transparent)]
    Newton(#[from] NewtonError),
}

pub type Result<T> = std::result::Result<T, Error>;
