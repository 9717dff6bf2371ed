use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::gram::structured_gram_apply;
use super::ops;
use crate::error::{Error, Result};
use crate::nlp::{Linearization, NlpProblem, PrimalDualState, ProblemDims, SolverConfig};
use crate::slack::{init_slack_variables, ClosedFormStep, SLACK_FLOOR};
use crate::solver::{OracleStep, StepOracle};

/// Discrete-time dynamics `x⁺ = f(x, u)` with its Jacobians.
pub trait DynamicsModel {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `F = ∂f/∂x`, `nx × nx`.
    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// `G = ∂f/∂u`, `nx × nu`.
    fn jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
}

impl<T: DynamicsModel + ?Sized> DynamicsModel for &T {
    fn nx(&self) -> usize {
        (**self).nx()
    }
    fn nu(&self) -> usize {
        (**self).nu()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (**self).step(x, u)
    }
    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        (**self).jac_x(x, u)
    }
    fn jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        (**self).jac_u(x, u)
    }
}

/// `x⁺ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl DynamicsModel for LinearModel {
    fn nx(&self) -> usize {
        self.a.nrows()
    }
    fn nu(&self) -> usize {
        self.b.ncols()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn jac_x(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn jac_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }
}

/// Horizon data of the condensed MPC problem
///
/// ```text
///   min  ½ Σ_{k=1}^{N-1} x_kᵀQx_k + ½ x_NᵀPx_N + ½ Σ_{k=0}^{N-1} u_kᵀRu_k
///   s.t. x_{k+1} = f(x_k, u_k),  a_k <= u_k <= b_k,  ½ x_NᵀPx_N <= c
/// ```
#[derive(Debug, Clone)]
pub struct MpcProblem<D> {
    pub model: D,
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Stacked lower bounds `[a_0; …; a_{N-1}]`.
    pub lower: DVector<f64>,
    /// Stacked upper bounds `[b_0; …; b_{N-1}]`.
    pub upper: DVector<f64>,
    pub terminal_level: f64,
    pub x0: DVector<f64>,
}

fn symmetric_psd(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return false;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min() >= -1e-12 * scale
}

impl<D: DynamicsModel> MpcProblem<D> {
    /// Problem with the same bounds `lower <= u_k <= upper` at every step.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: D,
        horizon: usize,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        p: DMatrix<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        terminal_level: f64,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let (nx, nu) = (model.nx(), model.nu());
        let stack = |v: &DVector<f64>| DVector::from_iterator(horizon * nu, (0..horizon).flat_map(|_| v.iter().copied()));
        let problem = Self {
            lower: stack(lower),
            upper: stack(upper),
            model,
            horizon,
            q,
            r,
            p,
            terminal_level,
            x0,
        };
        if lower.len() != nu || upper.len() != nu {
            return Err(Error::InvalidDims(format!("input bounds must have length {nu}")));
        }
        problem.validate(nx, nu)?;
        Ok(problem)
    }

    fn validate(&self, nx: usize, nu: usize) -> Result<()> {
        if self.horizon == 0 || nu == 0 || nx == 0 {
            return Err(Error::InvalidDims("horizon and dimensions must be positive".into()));
        }
        if self.q.shape() != (nx, nx) || self.p.shape() != (nx, nx) || self.r.shape() != (nu, nu) || self.x0.len() != nx {
            return Err(Error::InvalidDims("weight or initial-state shapes do not match the model".into()));
        }
        if !(symmetric_psd(&self.q) && symmetric_psd(&self.r) && symmetric_psd(&self.p)) {
            return Err(Error::InvalidConfig("Q, R and P must be symmetric positive semidefinite".into()));
        }
        if self.lower.iter().zip(self.upper.iter()).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidConfig("input bounds must satisfy a < b".into()));
        }
        if !(self.terminal_level > 0.0) {
            return Err(Error::InvalidConfig("terminal level must be positive".into()));
        }
        Ok(())
    }

    /// `N · nu`.
    pub fn input_len(&self) -> usize {
        self.horizon * self.model.nu()
    }

    fn input_block(&self, u: &DVector<f64>, k: usize) -> DVector<f64> {
        let nu = self.model.nu();
        u.rows(k * nu, nu).into_owned()
    }
}

/// Stacked states `[x_1; …; x_N]` of `x_{k+1} = f(x_k, u_k)`.
pub fn rollout<D: DynamicsModel + ?Sized>(model: &D, x0: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let (nx, nu) = (model.nx(), model.nu());
    if !u.len().is_multiple_of(nu) || x0.len() != nx {
        return Err(Error::InvalidDims("rollout inputs do not match the model".into()));
    }
    let horizon = u.len() / nu;
    let mut out = DVector::zeros(horizon * nx);
    let mut x = x0.clone();
    for k in 0..horizon {
        x = model.step(&x, &u.rows(k * nu, nu).into_owned());
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteEvaluation { what: "rollout" });
        }
        out.rows_mut(k * nx, nx).copy_from(&x);
    }
    Ok(out)
}

/// Rollout, cost and both adjoint gradients at one input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    /// `[x_1; …; x_N]`.
    pub states: DVector<f64>,
    pub objective: f64,
    pub gradient: DVector<f64>,
    /// `∇_u (½ x_NᵀPx_N)`.
    pub terminal_gradient: DVector<f64>,
    /// `½ x_NᵀPx_N`.
    pub terminal_value: f64,
}

/// Forward rollout followed by one backward sweep for `∇J` and `q`:
/// `μ_N = P x_N`, `μ_k = Q x_k + F_kᵀ μ_{k+1}`, block `k` of `∇J` is
/// `G_kᵀ μ_{k+1} + R u_k`; `q` follows the same recursion without stage terms.
pub fn adjoint_sweep<D: DynamicsModel>(problem: &MpcProblem<D>, u: &DVector<f64>) -> Result<Sweep> {
    let model = &problem.model;
    let (nx, nu, n) = (model.nx(), model.nu(), problem.horizon);
    if u.len() != n * nu {
        return Err(Error::InvalidDims(format!("input sequence must have length {}", n * nu)));
    }
    let states = rollout(model, &problem.x0, u)?;
    let state = |k: usize| -> DVector<f64> {
        if k == 0 {
            problem.x0.clone()
        } else {
            states.rows((k - 1) * nx, nx).into_owned()
        }
    };

    let x_n = state(n);
    let px = &problem.p * &x_n;
    let terminal_value = 0.5 * x_n.dot(&px);
    let mut objective = terminal_value;
    let mut gradient = DVector::zeros(n * nu);
    let mut q = DVector::zeros(n * nu);
    let mut mu = px.clone();
    let mut lam = px;
    for k in (0..n).rev() {
        let x = state(k);
        let uk = problem.input_block(u, k);
        let f = model.jac_x(&x, &uk);
        let g = model.jac_u(&x, &uk);
        let ru = &problem.r * &uk;
        objective += 0.5 * uk.dot(&ru);
        gradient.rows_mut(k * nu, nu).copy_from(&(g.tr_mul(&mu) + ru));
        q.rows_mut(k * nu, nu).copy_from(&g.tr_mul(&lam));
        if k > 0 {
            let qx = &problem.q * &x;
            objective += 0.5 * x.dot(&qx);
            mu = qx + f.tr_mul(&mu);
            lam = f.tr_mul(&lam);
        }
    }
    ops::add(n * (8 * nx * nx + 4 * nx * nu + 2 * nu * nu + 4 * nu + 3 * nx) + 2 * nx * nx + 2 * nx);
    if !objective.is_finite() || !gradient.iter().chain(q.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFiniteEvaluation { what: "condensed objective" });
    }
    Ok(Sweep {
        states,
        objective,
        gradient,
        terminal_gradient: q,
        terminal_value,
    })
}

/// `J(u)`; the constant `½ x_0ᵀQx_0` is left out.
pub fn condensed_objective<D: DynamicsModel>(problem: &MpcProblem<D>, u: &DVector<f64>) -> Result<f64> {
    adjoint_sweep(problem, u).map(|s| s.objective)
}

/// `∇J(u)` by backward substitution.
pub fn condensed_gradient<D: DynamicsModel>(problem: &MpcProblem<D>, u: &DVector<f64>) -> Result<DVector<f64>> {
    adjoint_sweep(problem, u).map(|s| s.gradient)
}

/// `q = ∇_u (½ x_NᵀPx_N)`.
pub fn terminal_gradient<D: DynamicsModel>(problem: &MpcProblem<D>, u: &DVector<f64>) -> Result<DVector<f64>> {
    adjoint_sweep(problem, u).map(|s| s.terminal_gradient)
}

/// Lifted decision vector `v = [u; y_a; y_b; y_c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedParts {
    pub u: DVector<f64>,
    pub y_a: DVector<f64>,
    pub y_b: DVector<f64>,
    pub y_c: f64,
}

impl LiftedParts {
    pub fn split(v: &DVector<f64>) -> Self {
        let len = (v.len() - 1) / 3;
        Self {
            u: v.rows(0, len).into_owned(),
            y_a: v.rows(len, len).into_owned(),
            y_b: v.rows(2 * len, len).into_owned(),
            y_c: v[3 * len],
        }
    }

    pub fn join(&self) -> DVector<f64> {
        let len = self.u.len();
        let mut v = DVector::zeros(3 * len + 1);
        v.rows_mut(0, len).copy_from(&self.u);
        v.rows_mut(len, len).copy_from(&self.y_a);
        v.rows_mut(2 * len, len).copy_from(&self.y_b);
        v[3 * len] = self.y_c;
        v
    }
}

/// Equality-only view of the MPC problem over `v = [u; y_a; y_b; y_c]` with
///
/// ```text
///   a - u + ½ y_a∘y_a = 0,   u - b + ½ y_b∘y_b = 0,   ½ x_NᵀPx_N - c + ½ y_c² = 0.
/// ```
///
/// The last sweep is cached and reused while `u` is unchanged.
#[derive(Debug)]
pub struct CondensedEvaluator<D> {
    problem: MpcProblem<D>,
    cache: Mutex<Option<(DVector<f64>, Arc<Sweep>)>>,
}

impl<D: DynamicsModel> CondensedEvaluator<D> {
    pub fn new(problem: MpcProblem<D>) -> Self {
        Self {
            problem,
            cache: Mutex::new(None),
        }
    }

    pub fn problem(&self) -> &MpcProblem<D> {
        &self.problem
    }

    /// Replaces the initial state and drops the cache.
    pub fn set_initial_state(&mut self, x0: DVector<f64>) {
        self.problem.x0 = x0;
        *self.cache.get_mut().unwrap_or_else(|e| e.into_inner()) = None;
    }

    /// Sweep at `u`, reusing the cached one when `u` is unchanged.
    pub fn sweep(&self, u: &DVector<f64>) -> Result<Arc<Sweep>> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((cached_u, sweep)) = cache.as_ref() {
            if cached_u == u {
                return Ok(Arc::clone(sweep));
            }
        }
        let sweep = Arc::new(adjoint_sweep(&self.problem, u)?);
        *cache = Some((u.clone(), Arc::clone(&sweep)));
        Ok(sweep)
    }

    /// Lifted constraint values `p(v)` from a sweep.
    fn constraint_values(&self, parts: &LiftedParts, sweep: &Sweep) -> DVector<f64> {
        let len = parts.u.len();
        let mut p = DVector::zeros(2 * len + 1);
        for j in 0..len {
            p[j] = self.problem.lower[j] - parts.u[j] + 0.5 * parts.y_a[j] * parts.y_a[j];
            p[len + j] = parts.u[j] - self.problem.upper[j] + 0.5 * parts.y_b[j] * parts.y_b[j];
        }
        p[2 * len] = sweep.terminal_value - self.problem.terminal_level + 0.5 * parts.y_c * parts.y_c;
        p
    }

    /// Lifted start: slacks from the bound and terminal margins at `u`, each
    /// margin floored at `1e-3`.
    pub fn initial_lifted_point(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let sweep = self.sweep(u)?;
        let y_a = init_slack_variables(&(&self.problem.lower - u), SLACK_FLOOR);
        let y_b = init_slack_variables(&(u - &self.problem.upper), SLACK_FLOOR);
        let y_c = (2.0 * SLACK_FLOOR.max(self.problem.terminal_level - sweep.terminal_value)).sqrt();
        Ok(LiftedParts {
            u: u.clone(),
            y_a,
            y_b,
            y_c,
        }
        .join())
    }

    fn len(&self) -> usize {
        self.problem.input_len()
    }

    fn nan_vector(len: usize) -> DVector<f64> {
        DVector::from_element(len, f64::NAN)
    }
}

impl<D: DynamicsModel> NlpProblem for CondensedEvaluator<D> {
    fn dims(&self) -> ProblemDims {
        let len = self.len();
        ProblemDims {
            n: 3 * len + 1,
            m: 0,
            p: 2 * len + 1,
        }
    }

    fn objective(&self, v: &DVector<f64>) -> f64 {
        let parts = LiftedParts::split(v);
        self.sweep(&parts.u).map_or(f64::NAN, |s| s.objective)
    }

    fn objective_gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let parts = LiftedParts::split(v);
        match self.sweep(&parts.u) {
            Ok(s) => {
                let mut grad = DVector::zeros(v.len());
                grad.rows_mut(0, s.gradient.len()).copy_from(&s.gradient);
                grad
            }
            Err(_) => Self::nan_vector(v.len()),
        }
    }

    fn eq(&self, v: &DVector<f64>) -> DVector<f64> {
        let parts = LiftedParts::split(v);
        match self.sweep(&parts.u) {
            Ok(s) => self.constraint_values(&parts, &s),
            Err(_) => Self::nan_vector(2 * self.len() + 1),
        }
    }

    fn eq_jacobian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let len = self.len();
        let parts = LiftedParts::split(v);
        let sweep = match self.sweep(&parts.u) {
            Ok(s) => s,
            Err(_) => return DMatrix::from_element(3 * len + 1, 2 * len + 1, f64::NAN),
        };
        let mut jac = DMatrix::zeros(3 * len + 1, 2 * len + 1);
        for j in 0..len {
            jac[(j, j)] = -1.0;
            jac[(j, len + j)] = 1.0;
            jac[(j, 2 * len)] = sweep.terminal_gradient[j];
            jac[(len + j, j)] = parts.y_a[j];
            jac[(2 * len + j, len + j)] = parts.y_b[j];
        }
        jac[(3 * len, 2 * len)] = parts.y_c;
        jac
    }
}

/// Closed-form projection step of the lifted MPC problem through the
/// structured Gram inverse; `O(N·nu)` work beyond the sweep.
pub fn mpc_projection_step<D: DynamicsModel>(
    evaluator: &CondensedEvaluator<D>,
    v: &DVector<f64>,
    alpha: f64,
) -> Result<ClosedFormStep> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig("alpha must be positive".into()));
    }
    let len = evaluator.len();
    if v.len() != 3 * len + 1 {
        return Err(Error::InvalidDims(format!("lifted MPC vector must have length {}", 3 * len + 1)));
    }
    let parts = LiftedParts::split(v);
    let sweep = evaluator.sweep(&parts.u)?;
    let p = evaluator.constraint_values(&parts, &sweep);
    let grad = &sweep.gradient;
    let q = &sweep.terminal_gradient;

    let inv_alpha = 1.0 / alpha;
    let mut rhs = DVector::zeros(2 * len + 1);
    let mut q_grad = 0.0;
    for j in 0..len {
        rhs[j] = inv_alpha * p[j] + grad[j];
        rhs[len + j] = inv_alpha * p[len + j] - grad[j];
        q_grad += q[j] * grad[j];
    }
    rhs[2 * len] = inv_alpha * p[2 * len] - q_grad;
    ops::add(10 * len + 3);

    let mu = structured_gram_apply(&parts.y_a, &parts.y_b, parts.y_c, q, &rhs)?;
    let mut d_v = DVector::zeros(3 * len + 1);
    let mu_c = mu[2 * len];
    for j in 0..len {
        d_v[j] = -alpha * (grad[j] - mu[j] + mu[len + j] + q[j] * mu_c);
        d_v[len + j] = -alpha * parts.y_a[j] * mu[j];
        d_v[2 * len + j] = -alpha * parts.y_b[j] * mu[len + j];
    }
    d_v[3 * len] = -alpha * parts.y_c * mu_c;
    ops::add(14 * len + 2);
    Ok(ClosedFormStep {
        d_v,
        mu,
        gram_dim: 2 * len + 1,
    })
}

/// Step oracle using [`mpc_projection_step`].
#[derive(Debug)]
pub struct MpcProjection<'a, D> {
    evaluator: &'a CondensedEvaluator<D>,
}

impl<'a, D: DynamicsModel> MpcProjection<'a, D> {
    pub fn new(evaluator: &'a CondensedEvaluator<D>) -> Self {
        Self { evaluator }
    }
}

impl<D: DynamicsModel> StepOracle for MpcProjection<'_, D> {
    fn direction(&mut self, _lin: &Linearization, state: &PrimalDualState, config: &SolverConfig) -> Result<OracleStep> {
        let step = mpc_projection_step(self.evaluator, &state.z, config.alpha)?;
        Ok(OracleStep {
            d_z: step.d_v,
            lambda: DVector::zeros(0),
            nu: step.mu,
            inner_iterations: 0,
        })
    }

    fn penalty_threshold(&self, d_z: &DVector<f64>, config: &SolverConfig) -> f64 {
        -d_z.norm_squared() / (2.0 * config.alpha)
    }
}

/// Inequality form of the MPC problem over `u` alone, with
/// `g(u) = [a - u; u - b; ½ x_NᵀPx_N - c]`.
#[derive(Debug)]
pub struct CondensedInequalityProblem<'a, D> {
    evaluator: &'a CondensedEvaluator<D>,
}

impl<'a, D: DynamicsModel> CondensedInequalityProblem<'a, D> {
    pub fn new(evaluator: &'a CondensedEvaluator<D>) -> Self {
        Self { evaluator }
    }
}

impl<D: DynamicsModel> NlpProblem for CondensedInequalityProblem<'_, D> {
    fn dims(&self) -> ProblemDims {
        let len = self.evaluator.len();
        ProblemDims {
            n: len,
            m: 2 * len + 1,
            p: 0,
        }
    }

    fn objective(&self, u: &DVector<f64>) -> f64 {
        self.evaluator.sweep(u).map_or(f64::NAN, |s| s.objective)
    }

    fn objective_gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        self.evaluator
            .sweep(u)
            .map_or_else(|_| CondensedEvaluator::<D>::nan_vector(u.len()), |s| s.gradient.clone())
    }

    fn ineq(&self, u: &DVector<f64>) -> DVector<f64> {
        let len = u.len();
        let problem = self.evaluator.problem();
        match self.evaluator.sweep(u) {
            Ok(s) => {
                let mut g = DVector::zeros(2 * len + 1);
                g.rows_mut(0, len).copy_from(&(&problem.lower - u));
                g.rows_mut(len, len).copy_from(&(u - &problem.upper));
                g[2 * len] = s.terminal_value - problem.terminal_level;
                g
            }
            Err(_) => CondensedEvaluator::<D>::nan_vector(2 * len + 1),
        }
    }

    fn ineq_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let len = u.len();
        match self.evaluator.sweep(u) {
            Ok(s) => {
                let mut jac = DMatrix::zeros(len, 2 * len + 1);
                for j in 0..len {
                    jac[(j, j)] = -1.0;
                    jac[(j, len + j)] = 1.0;
                    jac[(j, 2 * len)] = s.terminal_gradient[j];
                }
                jac
            }
            Err(_) => DMatrix::from_element(len, 2 * len + 1, f64::NAN),
        }
    }
}

/// Drops the first input block and repeats the last one.
pub fn shift_warm_start(u: &DVector<f64>, nu: usize) -> DVector<f64> {
    let len = u.len();
    let mut shifted = DVector::zeros(len);
    if len < nu {
        return shifted;
    }
    shifted.rows_mut(0, len - nu).copy_from(&u.rows(nu, len - nu));
    shifted.rows_mut(len - nu, nu).copy_from(&u.rows(len - nu, nu));
    shifted
}
