//! Augmented Lagrangian merit function, slack bookkeeping, penalty update and
//! the line search on `φ(t) = L_aug(w + t·d_w)`.
//!
//! ```text
//!   L_aug = J + (g + s)ᵀλ + hᵀν + ρ/2 ‖g + s‖² + ρ/2 ‖h‖²
//! ```

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::nlp::{eval_eq, eval_ineq, eval_objective, Linearization, NlpProblem, PrimalDualState, SolverConfig, StepDirection};

/// Penalty value beyond which a solve is aborted.
pub const MAX_PENALTY: f64 = 1e18;
/// Relative roundoff allowance of a merit evaluation, as a multiple of machine epsilon.
pub const MERIT_NOISE_FACTOR: f64 = 100.0;
const MAX_LINE_SEARCH_EVALUATIONS: usize = 60;

/// `s_j = max(0, -g_j)` for `ρ = 0`, otherwise `max(0, -g_j - λ_j/ρ)`.
pub fn compute_slack(g: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> DVector<f64> {
    if rho == 0.0 {
        g.map(|gj| (-gj).max(0.0))
    } else {
        g.zip_map(lambda, |gj, lj| (-gj - lj / rho).max(0.0))
    }
}

/// `d_s = -(g + ∇gᵀd_z + s)`.
pub fn slack_variation(g: &DVector<f64>, jac_g_t_dz: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
    -(g + jac_g_t_dz + s)
}

/// Merit value together with the sum of magnitudes of its terms, used to
/// bound the roundoff of the value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritEvaluation {
    pub value: f64,
    pub magnitude: f64,
}

impl MeritEvaluation {
    /// Roundoff level of `value`.
    pub fn noise(&self) -> f64 {
        MERIT_NOISE_FACTOR * f64::EPSILON * self.magnitude
    }
}

/// `L_aug` from already evaluated `J`, `g`, `h` and the dual variables.
pub fn augmented_lagrangian(
    objective: f64,
    g: &DVector<f64>,
    h: &DVector<f64>,
    lambda: &DVector<f64>,
    nu: &DVector<f64>,
    s: &DVector<f64>,
    rho: f64,
) -> MeritEvaluation {
    let gs = g + s;
    let ineq_term = gs.dot(lambda);
    let eq_term = h.dot(nu);
    let penalty = 0.5 * rho * (gs.norm_squared() + h.norm_squared());
    let magnitude = objective.abs()
        + gs.iter().zip(lambda.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>()
        + h.iter().zip(nu.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>()
        + penalty;
    MeritEvaluation {
        value: objective + ineq_term + eq_term + penalty,
        magnitude,
    }
}

/// `φ(t)` with its magnitude.
pub fn evaluate_merit<P: NlpProblem + ?Sized>(
    problem: &P,
    state: &PrimalDualState,
    step: &StepDirection,
    t: f64,
    rho: f64,
) -> Result<MeritEvaluation> {
    let w = state.advanced(step, t);
    let objective = eval_objective(problem, &w.z)?;
    let g = eval_ineq(problem, &w.z)?;
    let h = eval_eq(problem, &w.z)?;
    Ok(augmented_lagrangian(objective, &g, &h, &w.lambda, &w.nu, &w.s, rho))
}

/// `φ(t) = L_aug(z + t d_z, λ + t d_λ, ν + t d_ν, s + t d_s)`.
pub fn merit_value<P: NlpProblem + ?Sized>(
    problem: &P,
    state: &PrimalDualState,
    step: &StepDirection,
    t: f64,
    rho: f64,
) -> Result<f64> {
    evaluate_merit(problem, state, step, t, rho).map(|e| e.value)
}

/// `φ′(t)` from the gradient of `L_aug` at the shifted point.
pub fn merit_derivative<P: NlpProblem + ?Sized>(
    problem: &P,
    state: &PrimalDualState,
    step: &StepDirection,
    t: f64,
    rho: f64,
) -> Result<f64> {
    let w = state.advanced(step, t);
    let lin = Linearization::evaluate(problem, &w.z)?;
    let gs = &lin.ineq + &w.s;
    let dg = lin.ineq_jacobian.tr_mul(&step.d_z) + &step.d_s;
    let dh = lin.eq_jacobian.tr_mul(&step.d_z);
    Ok(lin.gradient.dot(&step.d_z)
        + dg.dot(&(&w.lambda + &gs * rho))
        + gs.dot(&step.d_lambda)
        + dh.dot(&(&w.nu + &lin.eq * rho))
        + lin.eq.dot(&step.d_nu))
}

/// Closed-form `φ′(0, ρ) = base - ρ · weight`, valid when the step satisfies
/// `∇gᵀd_z + d_s = -(g + s)` and `∇hᵀd_z = -h`.
///
/// `base = d_zᵀ∇J - (g+s)ᵀ(λ - d_λ) - hᵀ(ν - d_ν)` and
/// `weight = ‖g + s‖² + ‖h‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritSlope {
    pub base: f64,
    pub weight: f64,
}

impl MeritSlope {
    pub fn new(
        gradient: &DVector<f64>,
        g: &DVector<f64>,
        h: &DVector<f64>,
        state: &PrimalDualState,
        step: &StepDirection,
    ) -> Self {
        let gs = g + &state.s;
        let base =
            step.d_z.dot(gradient) - gs.dot(&(&state.lambda - &step.d_lambda)) - h.dot(&(&state.nu - &step.d_nu));
        Self {
            base,
            weight: gs.norm_squared() + h.norm_squared(),
        }
    }

    pub fn at(&self, rho: f64) -> f64 {
        self.base - rho * self.weight
    }
}

/// Closed-form `φ′(0)` at penalty `rho`.
pub fn merit_derivative_at_zero<P: NlpProblem + ?Sized>(
    problem: &P,
    state: &PrimalDualState,
    step: &StepDirection,
    rho: f64,
) -> Result<f64> {
    let lin = Linearization::evaluate(problem, &state.z)?;
    Ok(MeritSlope::new(&lin.gradient, &lin.ineq, &lin.eq, state, step).at(rho))
}

/// Penalty parameter owned by one solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeritState {
    pub rho: f64,
}

/// Penalty update: keeps `rho_prev` when `φ′(0, rho_prev) <= threshold`,
/// otherwise returns `max(ρ̂, 2 rho_prev)` with
/// `ρ̂ = 2‖[d_λ; d_ν]‖ / ‖[g + s; h]‖`, doubled further until the descent test
/// holds.
///
/// The projected-gradient variant uses `threshold = -‖d_z‖² / (2α)`, the SQP
/// baseline `-½ d_zᵀ H d_z`.
pub fn update_penalty(
    rho_prev: f64,
    phi_prime_zero_at: impl Fn(f64) -> f64,
    threshold: f64,
    g_plus_s: &DVector<f64>,
    h: &DVector<f64>,
    d_lambda: &DVector<f64>,
    d_nu: &DVector<f64>,
) -> Result<f64> {
    if phi_prime_zero_at(rho_prev) <= threshold {
        return Ok(rho_prev);
    }
    let residual = (g_plus_s.norm_squared() + h.norm_squared()).sqrt();
    if residual == 0.0 {
        return Err(Error::PenaltyUndefined);
    }
    let dual = (d_lambda.norm_squared() + d_nu.norm_squared()).sqrt();
    let rho_hat = 2.0 * dual / residual;
    let mut rho = rho_hat.max(2.0 * rho_prev);
    while !(phi_prime_zero_at(rho) <= threshold) {
        rho = if rho > 0.0 { 2.0 * rho } else { 1.0 };
        if rho > MAX_PENALTY {
            return Err(Error::PenaltyDiverged { rho });
        }
    }
    if rho > MAX_PENALTY {
        return Err(Error::PenaltyDiverged { rho });
    }
    Ok(rho)
}

/// Outcome of the line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub t: f64,
    /// `φ(t)` at the accepted step.
    pub phi: f64,
    /// Number of `φ` and `φ′` evaluations, `φ(0)` excluded.
    pub evaluations: usize,
    /// Sufficient decrease `φ(t) - φ(0) <= σ1 t φ′(0)` holds.
    pub sufficient_decrease: bool,
    /// Curvature condition, `None` when only sufficient decrease is checked.
    pub curvature: Option<bool>,
    /// Accepted because the predicted decrease is below the roundoff of `φ`.
    pub within_noise: bool,
}

/// Backtracking (simplified mode) or Wolfe line search over `(0, 1]`.
///
/// `noise` bounds the roundoff of `φ`. A trial with `t |φ′(0)| <= noise` and
/// `φ(t) <= φ(0) + noise` is accepted even when sufficient decrease cannot be
/// resolved; pass `0.0` to disable this.
pub fn wolfe_line_search(
    mut phi: impl FnMut(f64) -> Result<f64>,
    mut phi_prime: impl FnMut(f64) -> Result<f64>,
    phi_prime_zero: f64,
    config: &SolverConfig,
    noise: f64,
) -> Result<LineSearchResult> {
    if !(phi_prime_zero < 0.0) {
        return Err(Error::LineSearchFailure {
            reason: format!("not a descent direction (φ′(0) = {phi_prime_zero:e})"),
        });
    }
    let phi0 = phi(0.0)?;
    let armijo = |t: f64, v: f64| v - phi0 <= config.sigma1 * t * phi_prime_zero;
    let noisy = |t: f64, v: f64| t * phi_prime_zero.abs() <= noise && v <= phi0 + noise;
    let curvature_bound = -config.sigma2 * phi_prime_zero;
    let mut evaluations = 0;

    let accept = |t: f64, v: f64, curvature: Option<bool>, evaluations: usize| LineSearchResult {
        t,
        phi: v,
        evaluations,
        sufficient_decrease: armijo(t, v),
        curvature,
        within_noise: !armijo(t, v),
    };

    if config.simplified_line_search {
        let mut t = 1.0;
        let mut previous: Option<(f64, f64)> = None;
        loop {
            let v = phi(t)?;
            evaluations += 1;
            if armijo(t, v) || noisy(t, v) {
                return Ok(accept(t, v, None, evaluations));
            }
            if evaluations >= MAX_LINE_SEARCH_EVALUATIONS {
                break;
            }
            let trial = match previous {
                None => quadratic_minimizer(phi0, phi_prime_zero, t, v),
                Some((tp, vp)) => cubic_minimizer(phi0, phi_prime_zero, t, v, tp, vp),
            };
            let next = safeguard(trial, 0.1 * t, 0.5 * t);
            previous = Some((t, v));
            if next <= config.t_min {
                break;
            }
            t = next;
        }
        return Err(Error::LineSearchFailure {
            reason: format!("no step above t_min = {:e} gives sufficient decrease", config.t_min),
        });
    }

    let v1 = phi(1.0)?;
    evaluations += 1;
    if noisy(1.0, v1) && !armijo(1.0, v1) {
        return Ok(accept(1.0, v1, None, evaluations));
    }
    let (mut lo, mut hi): ((f64, f64, f64), (f64, f64)) = if armijo(1.0, v1) {
        let d1 = phi_prime(1.0)?;
        evaluations += 1;
        if d1.abs() <= curvature_bound || d1 <= curvature_bound {
            return Ok(accept(1.0, v1, Some(true), evaluations));
        }
        ((1.0, v1, d1), (0.0, phi0))
    } else {
        ((0.0, phi0, phi_prime_zero), (1.0, v1))
    };
    while evaluations < MAX_LINE_SEARCH_EVALUATIONS && (hi.0 - lo.0).abs() > config.t_min {
        let (a, b) = (lo.0.min(hi.0), lo.0.max(hi.0));
        let width = b - a;
        let trial = hermite_quadratic(lo.0, lo.1, lo.2, hi.0, hi.1);
        let t = safeguard(trial, a + 0.1 * width, b - 0.1 * width);
        let v = phi(t)?;
        evaluations += 1;
        if !armijo(t, v) || v >= lo.1 {
            if noisy(t, v) {
                return Ok(accept(t, v, None, evaluations));
            }
            hi = (t, v);
            continue;
        }
        let d = phi_prime(t)?;
        evaluations += 1;
        if d.abs() <= curvature_bound {
            return Ok(accept(t, v, Some(true), evaluations));
        }
        if d * (hi.0 - lo.0) >= 0.0 {
            hi = (lo.0, lo.1);
        }
        lo = (t, v, d);
    }
    if lo.0 > config.t_min && lo.0 > 0.0 {
        // Sufficient decrease holds at every stored `lo` with t > 0.
        return Ok(accept(lo.0, lo.1, Some(false), evaluations));
    }
    Err(Error::LineSearchFailure {
        reason: format!("Wolfe search interval collapsed below t_min = {:e}", config.t_min),
    })
}

fn safeguard(t: f64, lower: f64, upper: f64) -> f64 {
    if t.is_finite() {
        t.clamp(lower, upper)
    } else {
        upper
    }
}

/// Minimizer of the quadratic through `φ(0)`, `φ′(0)` and `φ(t)`.
fn quadratic_minimizer(phi0: f64, dphi0: f64, t: f64, v: f64) -> f64 {
    let curvature = v - phi0 - dphi0 * t;
    -dphi0 * t * t / (2.0 * curvature)
}

/// Minimizer of the quadratic through `φ(a)`, `φ′(a)` and `φ(b)`.
fn hermite_quadratic(a: f64, va: f64, da: f64, b: f64, vb: f64) -> f64 {
    let h = b - a;
    let curvature = vb - va - da * h;
    a - da * h * h / (2.0 * curvature)
}

/// Minimizer of the cubic through `φ(0)`, `φ′(0)`, `φ(t)` and `φ(t_prev)`.
fn cubic_minimizer(phi0: f64, dphi0: f64, t: f64, v: f64, tp: f64, vp: f64) -> f64 {
    let r1 = v - phi0 - dphi0 * t;
    let r2 = vp - phi0 - dphi0 * tp;
    let denom = t * t * tp * tp * (t - tp);
    let a = (tp * tp * r1 - t * t * r2) / denom;
    let b = (-tp * tp * tp * r1 + t * t * t * r2) / denom;
    if a == 0.0 {
        return -dphi0 / (2.0 * b);
    }
    let disc = b * b - 3.0 * a * dphi0;
    if disc < 0.0 {
        return f64::NAN;
    }
    (-b + disc.sqrt()) / (3.0 * a)
}
