//! Iteration drivers: the projected-gradient variant and the SQP baseline.
//!
//! Both share one loop and differ in the step oracle (projection of
//! `-α∇J` versus a QP with a Hessian approximation) and in the penalty
//! threshold (`-‖d_z‖²/(2α)` versus `-½ d_zᵀ H d_z`).

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::merit::{
    augmented_lagrangian, compute_slack, evaluate_merit, merit_derivative, slack_variation, update_penalty,
    wolfe_line_search, MeritSlope, MeritState, MERIT_NOISE_FACTOR,
};
use crate::nlp::{
    check_termination, KktResidual, Linearization, NlpProblem, PrimalDualState, SolverConfig, StepDirection,
};
use crate::qp::{extract_active_set, project_linearization, solve_strictly_convex_qp, LinearizedFeasibleSet};

/// Condition number above which the Hessian approximation is reported.
pub const HESSIAN_CONDITION_WARNING: f64 = 1e12;

/// Primal step and multiplier estimates returned by a step oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub d_z: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    /// Inner iterations spent (active-set pivots), zero for closed forms.
    pub inner_iterations: usize,
}

/// Source of search directions for [`solve_with_oracle`].
pub trait StepOracle {
    fn direction(&mut self, lin: &Linearization, state: &PrimalDualState, config: &SolverConfig) -> Result<OracleStep>;

    /// Upper bound the directional derivative of the merit must respect.
    fn penalty_threshold(&self, d_z: &DVector<f64>, config: &SolverConfig) -> f64;
}

/// Projection of `-α∇J` onto the linearized feasible set by the active-set
/// kernel.
#[derive(Debug, Clone, Default)]
pub struct QpProjection {
    active_set: Option<Vec<usize>>,
}

impl QpProjection {
    pub fn new() -> Self {
        Self::default()
    }
}

impl StepOracle for QpProjection {
    fn direction(&mut self, lin: &Linearization, _state: &PrimalDualState, config: &SolverConfig) -> Result<OracleStep> {
        let warm = if config.warm_start_qp { self.active_set.as_deref() } else { None };
        let sol = project_linearization(lin, config.alpha, warm)?;
        self.active_set = Some(extract_active_set(&sol));
        Ok(OracleStep {
            d_z: sol.d,
            lambda: sol.lambda,
            nu: sol.nu,
            inner_iterations: sol.iterations,
        })
    }

    fn penalty_threshold(&self, d_z: &DVector<f64>, config: &SolverConfig) -> f64 {
        -d_z.norm_squared() / (2.0 * config.alpha)
    }
}

/// Hessian model of the SQP baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum HessianStrategy {
    /// `H = I/α`, which makes the QP step coincide with the projection.
    ScaledIdentity,
    /// Powell-damped BFGS started from `initial_scale · I`.
    DampedBfgs { initial_scale: f64 },
    /// A fixed symmetric positive-definite matrix.
    Fixed(DMatrix<f64>),
}

/// Damped BFGS update of `h` with the pair `(delta_z, delta_grad)`.
///
/// When `delta_zᵀy < 0.2 delta_zᵀ H delta_z` the gradient change is replaced
/// by `θ y + (1-θ) H delta_z` with `θ = 0.8 sᵀHs / (sᵀHs - sᵀy)`, so that the
/// result stays positive definite. Steps shorter than `1e-14` leave `h`
/// unchanged.
pub fn damped_bfgs_update(h: &DMatrix<f64>, delta_z: &DVector<f64>, delta_grad: &DVector<f64>) -> DMatrix<f64> {
    if delta_z.norm() < 1e-14 {
        return h.clone();
    }
    let hs = h * delta_z;
    let shs = delta_z.dot(&hs);
    let sy = delta_z.dot(delta_grad);
    let theta = if sy >= 0.2 * shs { 1.0 } else { 0.8 * shs / (shs - sy) };
    let r = delta_grad * theta + &hs * (1.0 - theta);
    let sr = delta_z.dot(&r);
    let updated = h - &hs * hs.transpose() / shs + &r * r.transpose() / sr;
    0.5 * (&updated + updated.transpose())
}

fn condition_number(h: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(h.clone()).eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// QP subproblem `min ½ dᵀHd + ∇Jᵀd` over the linearized feasible set.
#[derive(Debug, Clone)]
pub struct SqpStep {
    strategy: HessianStrategy,
    hessian: Option<DMatrix<f64>>,
    previous: Option<(DVector<f64>, Linearization)>,
    active_set: Option<Vec<usize>>,
}

impl SqpStep {
    pub fn new(strategy: HessianStrategy) -> Self {
        Self {
            strategy,
            hessian: None,
            previous: None,
            active_set: None,
        }
    }

    /// Current Hessian approximation, if one has been formed.
    pub fn hessian(&self) -> Option<&DMatrix<f64>> {
        self.hessian.as_ref()
    }
}

impl StepOracle for SqpStep {
    fn direction(&mut self, lin: &Linearization, state: &PrimalDualState, config: &SolverConfig) -> Result<OracleStep> {
        let n = lin.gradient.len();
        let h = match (&self.strategy, self.hessian.take()) {
            (HessianStrategy::ScaledIdentity, _) => DMatrix::identity(n, n) / config.alpha,
            (HessianStrategy::Fixed(h), _) => h.clone(),
            (HessianStrategy::DampedBfgs { initial_scale }, None) => DMatrix::identity(n, n) * *initial_scale,
            (HessianStrategy::DampedBfgs { .. }, Some(h)) => match &self.previous {
                Some((z_prev, lin_prev)) => {
                    let delta_z = &state.z - z_prev;
                    let delta_grad = lin.lagrangian_gradient(&state.lambda, &state.nu)
                        - lin_prev.lagrangian_gradient(&state.lambda, &state.nu);
                    let updated = damped_bfgs_update(&h, &delta_z, &delta_grad);
                    let condition = condition_number(&updated);
                    if condition > HESSIAN_CONDITION_WARNING {
                        log::warn!("BFGS approximation condition number {condition:e}");
                    }
                    updated
                }
                None => h,
            },
        };
        let set = LinearizedFeasibleSet::from_linearization(lin);
        let warm = if config.warm_start_qp { self.active_set.as_deref() } else { None };
        let sol = solve_strictly_convex_qp(&h, &lin.gradient, &set, warm)?;
        self.active_set = Some(extract_active_set(&sol));
        self.previous = Some((state.z.clone(), lin.clone()));
        self.hessian = Some(h);
        Ok(OracleStep {
            d_z: sol.d,
            lambda: sol.lambda,
            nu: sol.nu,
            inner_iterations: sol.iterations,
        })
    }

    fn penalty_threshold(&self, d_z: &DVector<f64>, _config: &SolverConfig) -> f64 {
        let h = self.hessian.as_ref().expect("threshold requested before a direction");
        -0.5 * d_z.dot(&(h * d_z))
    }
}

/// Per-iteration trace entry.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub norm_dz: f64,
    /// `φ(0)` at the penalty chosen this iteration.
    pub phi_before: f64,
    /// `φ(t)` at the accepted step.
    pub phi_after: f64,
    pub rho: f64,
    pub t: f64,
    /// Stationarity with the multiplier estimates of this step.
    pub kkt_stationarity: f64,
    pub feasibility: f64,
    pub qp_iterations: usize,
    /// Closed-form `φ′(0)` at the chosen penalty.
    pub phi_prime_zero: f64,
    pub penalty_threshold: f64,
    /// Roundoff allowance of `φ′(0)` in the penalty test.
    pub slope_noise: f64,
    pub line_search_evaluations: usize,
    pub sufficient_decrease: bool,
    /// Step accepted because the predicted decrease is below the roundoff of `φ`.
    pub within_noise: bool,
    /// Roundoff allowance of `φ` used by the line search.
    pub merit_noise: f64,
    /// `‖λ‖` after the update.
    pub lambda_norm: f64,
    /// `max_{k <= iter} ‖λ_G^(k)‖`.
    pub max_lambda_estimate_norm: f64,
    /// Smallest entry of `λ` after the update (`+∞` when `m = 0`).
    pub min_lambda: f64,
    /// Smallest entry of `s` after the update (`+∞` when `m = 0`).
    pub min_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
    LineSearchFailure,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// At convergence the multipliers are those of the final step.
    pub final_state: PrimalDualState,
    /// Residual of the final state, computed with the freshest multipliers.
    pub final_residual: KktResidual,
    pub trace: Vec<IterationRecord>,
    pub wall_time: Duration,
    /// Error behind a non-converged status other than `MaxIterations`.
    pub failure: Option<Error>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// Major iterations performed.
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

fn status_of(error: &Error) -> Option<SolveStatus> {
    match error {
        Error::InfeasibleLinearization { .. } => Some(SolveStatus::Infeasible),
        Error::LineSearchFailure { .. } => Some(SolveStatus::LineSearchFailure),
        Error::DegenerateActiveSet { .. }
        | Error::MaxQpIterations { .. }
        | Error::NotPositiveDefinite
        | Error::PenaltyUndefined
        | Error::PenaltyDiverged { .. }
        | Error::RankDeficientConstraints
        | Error::DegenerateSlacks { .. } => Some(SolveStatus::Degenerate),
        _ => None,
    }
}

fn min_entry(v: &DVector<f64>) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Runs the shared major-iteration loop with the given step oracle.
///
/// Solver failures that characterize the problem (infeasible or degenerate
/// linearizations, failed line searches) end the solve with the matching
/// status; evaluation and configuration errors are returned as `Err`.
pub fn solve_with_oracle<P, O>(problem: &P, z0: &DVector<f64>, config: &SolverConfig, oracle: &mut O) -> Result<SolveReport>
where
    P: NlpProblem + ?Sized,
    O: StepOracle + ?Sized,
{
    config.validate()?;
    let dims = problem.dims();
    dims.validate()?;
    let start = Instant::now();
    let mut state = PrimalDualState::new(z0.clone(), dims);
    state.check_dims(dims)?;
    let mut merit = MeritState::default();
    let mut trace = Vec::new();
    let mut max_lambda_estimate = 0.0_f64;
    let mut last_residual = KktResidual::default();

    let finish = |status, state, residual, trace, failure| SolveReport {
        status,
        final_state: state,
        final_residual: residual,
        trace,
        wall_time: start.elapsed(),
        failure,
    };

    for iter in 0..config.max_iterations {
        let lin = Linearization::evaluate(problem, &state.z)?;
        let step = match oracle.direction(&lin, &state, config) {
            Ok(step) => step,
            Err(e) => match status_of(&e) {
                Some(status) => {
                    let residual = KktResidual::from_linearization(&lin, &state.lambda, &state.nu);
                    return Ok(finish(status, state, residual, trace, Some(e)));
                }
                None => return Err(e),
            },
        };
        if !step.d_z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteEvaluation { what: "search direction" });
        }

        let residual = KktResidual::from_linearization(&lin, &step.lambda, &step.nu);
        last_residual = residual;
        if check_termination(&residual, config) {
            state.s = compute_slack(&lin.ineq, &step.lambda, merit.rho);
            state.lambda = step.lambda;
            state.nu = step.nu;
            return Ok(finish(SolveStatus::Converged, state, residual, trace, None));
        }
        if iter == 0 {
            state.lambda = step.lambda.clone();
            state.nu = step.nu.clone();
        }
        max_lambda_estimate = max_lambda_estimate.max(step.lambda.norm());

        let d_lambda = &step.lambda - &state.lambda;
        let d_nu = &step.nu - &state.nu;
        state.s = compute_slack(&lin.ineq, &state.lambda, merit.rho);
        let jg_dz = lin.ineq_jacobian.tr_mul(&step.d_z);
        let direction = StepDirection {
            d_s: slack_variation(&lin.ineq, &jg_dz, &state.s),
            d_z: step.d_z,
            d_lambda,
            d_nu,
        };

        let slope = MeritSlope::new(&lin.gradient, &lin.ineq, &lin.eq, &state, &direction);
        let threshold = oracle.penalty_threshold(&direction.d_z, config);
        let gradient_norm = lin.gradient.norm();
        let slope_noise =
            MERIT_NOISE_FACTOR * f64::EPSILON * gradient_norm * (direction.d_z.norm() + config.alpha * gradient_norm);
        let g_plus_s = &lin.ineq + &state.s;
        let rho = match update_penalty(
            merit.rho,
            |r| slope.at(r),
            threshold + slope_noise,
            &g_plus_s,
            &lin.eq,
            &direction.d_lambda,
            &direction.d_nu,
        ) {
            Ok(rho) => rho,
            Err(e) => {
                let status = status_of(&e).unwrap_or(SolveStatus::Degenerate);
                return Ok(finish(status, state, residual, trace, Some(e)));
            }
        };
        merit.rho = rho;
        let phi_prime_zero = slope.at(rho);

        let at_zero = augmented_lagrangian(lin.objective, &lin.ineq, &lin.eq, &state.lambda, &state.nu, &state.s, rho);
        let noise = at_zero.noise();
        // Nonnegative slopes within roundoff are searched as marginal descent.
        let search_slope = if (0.0..=slope_noise).contains(&phi_prime_zero) {
            -slope_noise
        } else {
            phi_prime_zero
        };
        let search = wolfe_line_search(
            |t| {
                if t == 0.0 {
                    Ok(at_zero.value)
                } else {
                    evaluate_merit(problem, &state, &direction, t, rho).map(|e| e.value)
                }
            },
            |t| merit_derivative(problem, &state, &direction, t, rho),
            search_slope,
            config,
            noise,
        );
        let search = match search {
            Ok(s) => s,
            Err(e) => match status_of(&e) {
                Some(status) => return Ok(finish(status, state, residual, trace, Some(e))),
                None => return Err(e),
            },
        };

        state = state.advanced(&direction, search.t);
        trace.push(IterationRecord {
            iter,
            norm_dz: direction.d_z.norm(),
            phi_before: at_zero.value,
            phi_after: search.phi,
            rho,
            t: search.t,
            kkt_stationarity: residual.stationarity,
            feasibility: residual.feasibility(),
            qp_iterations: step.inner_iterations,
            phi_prime_zero,
            penalty_threshold: threshold,
            slope_noise,
            line_search_evaluations: search.evaluations,
            sufficient_decrease: search.sufficient_decrease,
            within_noise: search.within_noise,
            merit_noise: noise,
            lambda_norm: state.lambda.norm(),
            max_lambda_estimate_norm: max_lambda_estimate,
            min_lambda: min_entry(&state.lambda),
            min_slack: min_entry(&state.s),
        });
    }
    Ok(finish(SolveStatus::MaxIterations, state, last_residual, trace, None))
}

/// Projected-gradient variant with the active-set projection.
pub fn solve_variant<P: NlpProblem + ?Sized>(problem: &P, z0: &DVector<f64>, config: &SolverConfig) -> Result<SolveReport> {
    solve_with_oracle(problem, z0, config, &mut QpProjection::new())
}

/// SQP baseline with the given Hessian model.
pub fn solve_sqp<P: NlpProblem + ?Sized>(
    problem: &P,
    z0: &DVector<f64>,
    config: &SolverConfig,
    hessian: HessianStrategy,
) -> Result<SolveReport> {
    solve_with_oracle(problem, z0, config, &mut SqpStep::new(hessian))
}
