//! Squared-slack lifting `g(z) <= 0  ->  g(z) + ½ y∘y = 0` and the closed-form
//! projection onto the linearization of an equality-only problem.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nlp::{Linearization, NlpProblem, PrimalDualState, ProblemDims, SolverConfig};
use crate::solver::{OracleStep, StepOracle};

/// Default floor on `-g` when initializing slacks.
pub const SLACK_FLOOR: f64 = 1e-3;
const GRAM_REGULARIZATION: f64 = 1e-10;

/// Equality-only problem in `v = [z; y]` with constraints
/// `p(v) = [g(z) + ½ y∘y; h(z)]` and the objective `J(z)`.
#[derive(Debug, Clone)]
pub struct LiftedProblem<P> {
    base: P,
}

/// Lifts `problem` by one squared slack per inequality.
pub fn lift<P: NlpProblem>(problem: P) -> LiftedProblem<P> {
    LiftedProblem { base: problem }
}

impl<P: NlpProblem> LiftedProblem<P> {
    pub fn base(&self) -> &P {
        &self.base
    }

    pub fn into_base(self) -> P {
        self.base
    }

    /// `(z, y)` parts of `v`.
    pub fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.base.dims().n;
        (v.rows(0, n).into_owned(), v.rows(n, v.len() - n).into_owned())
    }

    pub fn join(&self, z: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(z.len() + y.len(), z.iter().chain(y.iter()).copied())
    }

    /// `[z; y0]` with `y0` from [`init_slack_variables`] at `g(z)`.
    pub fn initial_point(&self, z: &DVector<f64>, floor: f64) -> DVector<f64> {
        let y = init_slack_variables(&self.base.ineq(z), floor);
        self.join(z, &y)
    }
}

impl<P: NlpProblem> NlpProblem for LiftedProblem<P> {
    fn dims(&self) -> ProblemDims {
        let d = self.base.dims();
        ProblemDims {
            n: d.n + d.m,
            m: 0,
            p: d.m + d.p,
        }
    }

    fn objective(&self, v: &DVector<f64>) -> f64 {
        let (z, _) = self.split(v);
        self.base.objective(&z)
    }

    fn objective_gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let (z, _) = self.split(v);
        let mut grad = DVector::zeros(v.len());
        let g = self.base.objective_gradient(&z);
        if g.len() != z.len() {
            return g;
        }
        grad.rows_mut(0, z.len()).copy_from(&g);
        grad
    }

    fn eq(&self, v: &DVector<f64>) -> DVector<f64> {
        let (z, y) = self.split(v);
        let g = self.base.ineq(&z);
        let h = self.base.eq(&z);
        if g.len() != y.len() {
            return g;
        }
        let rows = g.zip_map(&y, |gj, yj| gj + 0.5 * yj * yj);
        DVector::from_iterator(rows.len() + h.len(), rows.iter().chain(h.iter()).copied())
    }

    fn eq_jacobian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let d = self.base.dims();
        let (z, y) = self.split(v);
        let jg = self.base.ineq_jacobian(&z);
        let jh = self.base.eq_jacobian(&z);
        if jg.shape() != (d.n, d.m) || jh.shape() != (d.n, d.p) {
            return DMatrix::zeros(0, 0);
        }
        let mut jac = DMatrix::zeros(d.n + d.m, d.m + d.p);
        jac.view_mut((0, 0), (d.n, d.m)).copy_from(&jg);
        jac.view_mut((0, d.m), (d.n, d.p)).copy_from(&jh);
        for j in 0..d.m {
            jac[(d.n + j, j)] = y[j];
        }
        jac
    }
}

/// `y_j = √(2 max(floor, -g_j))`.
pub fn init_slack_variables(g: &DVector<f64>, floor: f64) -> DVector<f64> {
    g.map(|gj| (2.0 * floor.max(-gj)).sqrt())
}

/// Closed-form projection step of an equality-only problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormStep {
    pub d_v: DVector<f64>,
    /// Multipliers of the equality rows, `(1/α) d_v + ∇J + ∇p μ = 0`.
    pub mu: DVector<f64>,
    /// Dimension of the factorized Gram matrix.
    pub gram_dim: usize,
}

/// Solves `(∇pᵀ∇p) μ = (1/α) p - ∇pᵀ∇J` by Cholesky, with one retry at
/// `+1e-10 I`, and returns `d = -α (∇J + ∇p μ)`.
pub fn equality_projection(
    gradient: &DVector<f64>,
    constraints: &DVector<f64>,
    jacobian: &DMatrix<f64>,
    alpha: f64,
) -> Result<ClosedFormStep> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig("alpha must be positive".into()));
    }
    let gram = jacobian.tr_mul(jacobian);
    let rhs = constraints / alpha - jacobian.tr_mul(gradient);
    let dim = gram.nrows();
    let chol = match Cholesky::new(gram.clone()) {
        Some(c) => c,
        None => {
            let chol = Cholesky::new(gram + DMatrix::identity(dim, dim) * GRAM_REGULARIZATION)
                .ok_or(Error::RankDeficientConstraints)?;
            let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |acc, l| acc.min(l * l));
            if min_pivot <= 10.0 * GRAM_REGULARIZATION {
                return Err(Error::RankDeficientConstraints);
            }
            chol
        }
    };
    let mu = chol.solve(&rhs);
    let d_v = -(gradient + jacobian * &mu) * alpha;
    Ok(ClosedFormStep { d_v, mu, gram_dim: dim })
}

/// Closed-form projection of `-α∇J(v)` onto the linearization of the lifted
/// constraints at `v`.
pub fn closed_form_projection<P: NlpProblem>(lifted: &LiftedProblem<P>, v: &DVector<f64>, alpha: f64) -> Result<ClosedFormStep> {
    let lin = Linearization::evaluate(lifted, v)?;
    equality_projection(&lin.gradient, &lin.eq, &lin.eq_jacobian, alpha)
}

/// Step oracle for equality-only problems using [`equality_projection`].
#[derive(Debug, Clone, Default)]
pub struct ClosedFormProjection {
    gram_dims: Vec<usize>,
}

impl ClosedFormProjection {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dimension of every Gram matrix factorized so far.
    pub fn gram_dims(&self) -> &[usize] {
        &self.gram_dims
    }
}

impl StepOracle for ClosedFormProjection {
    fn direction(&mut self, lin: &Linearization, _state: &PrimalDualState, config: &SolverConfig) -> Result<OracleStep> {
        if !lin.ineq.is_empty() {
            return Err(Error::InvalidDims("closed-form projection needs an equality-only problem".into()));
        }
        let step = equality_projection(&lin.gradient, &lin.eq, &lin.eq_jacobian, config.alpha)?;
        self.gram_dims.push(step.gram_dim);
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

/// Signs of the inequality multipliers at a lifted solution.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSignReport {
    /// `min_j λ_j`, `+∞` without inequalities.
    pub min_lambda: f64,
    /// Indices with `λ_j < -1e-8`.
    pub negative: Vec<usize>,
}

impl MultiplierSignReport {
    pub fn all_nonnegative(&self) -> bool {
        self.negative.is_empty()
    }
}

/// Inspects the first `m` entries of the lifted multipliers `μ = [λ; ν]`.
pub fn check_multiplier_signs(mu: &DVector<f64>, m: usize) -> MultiplierSignReport {
    let lambda = mu.rows(0, m);
    MultiplierSignReport {
        min_lambda: lambda.iter().copied().fold(f64::INFINITY, f64::min),
        negative: lambda
            .iter()
            .enumerate()
            .filter(|(_, l)| **l < -1e-8)
            .map(|(j, _)| j)
            .collect(),
    }
}
