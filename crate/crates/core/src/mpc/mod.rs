//! Condensed single-shooting nonlinear MPC with squared-slack bounds and the
//! structured projection step.

mod condensed;
mod dare;
mod gram;
pub mod ops;

pub use condensed::{
    adjoint_sweep, condensed_gradient, condensed_objective, mpc_projection_step, rollout, shift_warm_start,
    terminal_gradient, CondensedEvaluator, CondensedInequalityProblem, DynamicsModel, LiftedParts, LinearModel,
    MpcProblem, MpcProjection, Sweep,
};
pub use dare::{dare_residual, solve_dare, DARE_MAX_SWEEPS, DARE_TOLERANCE};
pub use gram::{assemble_gram, structured_gram_apply};
