use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("time level {level} out of range 0..={max}")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("constraint index {index} out of range (have {count})")]
    ConstraintOutOfRange { index: usize, count: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sign assumption on the boundary source violated: d/dy = {value:e} at {location}")]
    AssumptionViolated { location: String, value: f64 },

    #[error("Newton iteration did not converge at step {step}: residual {residual:e} after {iterations} iterations")]
    NewtonDivergence {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("line search failed after {backtracks} backtracks at iteration {iteration}")]
    LineSearchFailure { iteration: usize, backtracks: usize },

    #[error("{method} did not converge in {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "augmented Lagrangian did not converge after {} outer iterations (infeasibility {:e}, stationarity {:e})",
        .0.report.outer_iterations,
        .0.report.max_infeasibility(),
        .0.report.stationarity
    )]
    KktNonConvergence(Box<crate::optimize::KktFailure>),
}
