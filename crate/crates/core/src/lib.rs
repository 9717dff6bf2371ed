//! Projected-gradient and SQP solvers for smooth nonlinear programs
//!
//! ```text
//!   min J(z)   s.t.  g(z) <= 0,  h(z) = 0
//! ```
//!
//! Each major iteration projects `-α∇J(z)` onto the linearized feasible set
//! (active-set QP, or a closed-form step after squared-slack lifting), then
//! globalizes with an augmented-Lagrangian merit line search. An SQP driver
//! sharing the same merit machinery serves as the baseline.
//!
//! The [`mpc`] module condenses a nonlinear MPC problem onto the input
//! sequence and applies the lifted projection in `O(N)` per step; the
//! [`pendulum`] module runs the cart-pendulum swing-up benchmark on top.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod merit;
pub mod mpc;
pub mod nlp;
pub mod pendulum;
pub mod problems;
pub mod qp;
pub mod slack;
pub mod solver;

pub use error::{Error, Result};
pub use merit::{LineSearchResult, MeritSlope, MeritState};
pub use nlp::{
    check_termination, kkt_residual, validate_problem, FnProblem, KktResidual, Linearization, NlpProblem,
    PrimalDualState, ProblemDims, SolverConfig, StepDirection,
};
pub use qp::{solve_strictly_convex_qp, LinearizedFeasibleSet, QpSolution};
pub use slack::{lift, ClosedFormProjection, LiftedProblem};
pub use solver::{
    solve_sqp, solve_variant, solve_with_oracle, HessianStrategy, IterationRecord, QpProjection, SolveReport,
    SolveStatus, SqpStep, StepOracle,
};
