use thiserror::Error;

/// Errors raised by problem evaluation, the QP kernel and the solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid problem dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} returned a non-finite value")]
    NonFiniteEvaluation { what: &'static str },

    #[error("{what} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error(
        "{what} disagrees with finite differences at entry ({row}, {col}): \
         analytic {analytic:e}, numeric {numeric:e}"
    )]
    DerivativeMismatch {
        what: &'static str,
        row: usize,
        col: usize,
        analytic: f64,
        numeric: f64,
    },

    #[error("QP Hessian is not positive definite")]
    NotPositiveDefinite,

    #[error("linearized constraints are infeasible (phase-1 residual {residual:e})")]
    InfeasibleLinearization { residual: f64 },

    #[error("active constraint matrix is rank deficient (condition estimate {condition:e})")]
    DegenerateActiveSet { condition: f64 },

    #[error("QP active-set loop exceeded {limit} iterations")]
    MaxQpIterations { limit: usize },

    #[error("penalty parameter undefined: constraint residual vanishes while the descent test fails")]
    PenaltyUndefined,

    #[error("penalty parameter diverged (rho = {rho:e})")]
    PenaltyDiverged { rho: f64 },

    #[error("line search failed: {reason}")]
    LineSearchFailure { reason: String },

    #[error("constraint Jacobian is rank deficient; Gram matrix could not be factorized")]
    RankDeficientConstraints,

    #[error("bound slacks y_a[{index}] and y_b[{index}] both vanish")]
    DegenerateSlacks { index: usize },

    #[error("Riccati iteration did not converge after {sweeps} sweeps")]
    DareDiverged { sweeps: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
