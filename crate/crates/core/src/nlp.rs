//! Problem abstraction shared by both solvers.
//!
//! A nonlinear program has the form
//!
//! ```text
//!   min  J(z)
//!   s.t. g(z) <= 0      (m rows)
//!        h(z)  = 0      (p rows)
//! ```
//!
//! Jacobians follow the column convention: `∇g(z)` is `n × m` and its
//! columns are the constraint gradients, so the Lagrangian gradient reads
//! `∇J + ∇g λ + ∇h ν`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDims {
    /// Primal dimension.
    pub n: usize,
    /// Inequality count.
    pub m: usize,
    /// Equality count.
    pub p: usize,
}

impl ProblemDims {
    pub fn new(n: usize, m: usize, p: usize) -> Result<Self> {
        let dims = Self { n, m, p };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidDims("n must be at least 1".into()));
        }
        if self.p > self.n {
            return Err(Error::InvalidDims(format!(
                "p = {} equalities exceed n = {} variables",
                self.p, self.n
            )));
        }
        Ok(())
    }
}

/// Evaluation contract for `J`, `g`, `h` and their first derivatives.
///
/// Implementations must be deterministic and free of side effects visible
/// to the caller; the solvers may evaluate the same point several times.
pub trait NlpProblem {
    fn dims(&self) -> ProblemDims;

    fn objective(&self, z: &DVector<f64>) -> f64;

    fn objective_gradient(&self, z: &DVector<f64>) -> DVector<f64>;

    fn ineq(&self, _z: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    /// `n × m`, columns are `∇g_j`.
    fn ineq_jacobian(&self, _z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dims().n, 0)
    }

    fn eq(&self, _z: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    /// `n × p`, columns are `∇h_k`.
    fn eq_jacobian(&self, _z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dims().n, 0)
    }
}

impl<T: NlpProblem + ?Sized> NlpProblem for &T {
    fn dims(&self) -> ProblemDims {
        (**self).dims()
    }
    fn objective(&self, z: &DVector<f64>) -> f64 {
        (**self).objective(z)
    }
    fn objective_gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        (**self).objective_gradient(z)
    }
    fn ineq(&self, z: &DVector<f64>) -> DVector<f64> {
        (**self).ineq(z)
    }
    fn ineq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        (**self).ineq_jacobian(z)
    }
    fn eq(&self, z: &DVector<f64>) -> DVector<f64> {
        (**self).eq(z)
    }
    fn eq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        (**self).eq_jacobian(z)
    }
}

impl<T: NlpProblem + ?Sized> NlpProblem for Box<T> {
    fn dims(&self) -> ProblemDims {
        (**self).dims()
    }
    fn objective(&self, z: &DVector<f64>) -> f64 {
        (**self).objective(z)
    }
    fn objective_gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        (**self).objective_gradient(z)
    }
    fn ineq(&self, z: &DVector<f64>) -> DVector<f64> {
        (**self).ineq(z)
    }
    fn ineq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        (**self).ineq_jacobian(z)
    }
    fn eq(&self, z: &DVector<f64>) -> DVector<f64> {
        (**self).eq(z)
    }
    fn eq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        (**self).eq_jacobian(z)
    }
}

type ScalarFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// An [`NlpProblem`] assembled from closures.
pub struct FnProblem {
    dims: ProblemDims,
    objective: ScalarFn,
    gradient: VectorFn,
    ineq: Option<(VectorFn, MatrixFn)>,
    eq: Option<(VectorFn, MatrixFn)>,
}

impl FnProblem {
    /// Unconstrained problem in `n` variables; add constraints with
    /// [`FnProblem::with_ineq`] and [`FnProblem::with_eq`].
    pub fn new(
        n: usize,
        objective: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dims: ProblemDims { n, m: 0, p: 0 },
            objective: Box::new(objective),
            gradient: Box::new(gradient),
            ineq: None,
            eq: None,
        }
    }

    pub fn with_ineq(
        mut self,
        m: usize,
        g: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.dims.m = m;
        self.ineq = Some((Box::new(g), Box::new(jac)));
        self
    }

    pub fn with_eq(
        mut self,
        p: usize,
        h: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.dims.p = p;
        self.eq = Some((Box::new(h), Box::new(jac)));
        self
    }
}

impl std::fmt::Debug for FnProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnProblem").field("dims", &self.dims).finish_non_exhaustive()
    }
}

impl NlpProblem for FnProblem {
    fn dims(&self) -> ProblemDims {
        self.dims
    }
    fn objective(&self, z: &DVector<f64>) -> f64 {
        (self.objective)(z)
    }
    fn objective_gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(z)
    }
    fn ineq(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.ineq {
            Some((g, _)) => g(z),
            None => DVector::zeros(0),
        }
    }
    fn ineq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        match &self.ineq {
            Some((_, jac)) => jac(z),
            None => DMatrix::zeros(self.dims.n, 0),
        }
    }
    fn eq(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.eq {
            Some((h, _)) => h(z),
            None => DVector::zeros(0),
        }
    }
    fn eq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        match &self.eq {
            Some((_, jac)) => jac(z),
            None => DMatrix::zeros(self.dims.n, 0),
        }
    }
}

fn check_vector(what: &'static str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::ShapeMismatch {
            what,
            expected: (len, 1),
            found: (v.len(), 1),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteEvaluation { what });
    }
    Ok(())
}

fn check_matrix(what: &'static str, a: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if a.shape() != shape {
        return Err(Error::ShapeMismatch {
            what,
            expected: shape,
            found: a.shape(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteEvaluation { what });
    }
    Ok(())
}

pub(crate) fn eval_objective<P: NlpProblem + ?Sized>(problem: &P, z: &DVector<f64>) -> Result<f64> {
    let value = problem.objective(z);
    if !value.is_finite() {
        return Err(Error::NonFiniteEvaluation { what: "objective" });
    }
    Ok(value)
}

pub(crate) fn eval_ineq<P: NlpProblem + ?Sized>(problem: &P, z: &DVector<f64>) -> Result<DVector<f64>> {
    let g = problem.ineq(z);
    check_vector("inequality constraints", &g, problem.dims().m)?;
    Ok(g)
}

pub(crate) fn eval_eq<P: NlpProblem + ?Sized>(problem: &P, z: &DVector<f64>) -> Result<DVector<f64>> {
    let h = problem.eq(z);
    check_vector("equality constraints", &h, problem.dims().p)?;
    Ok(h)
}

/// All first-order data of a problem at one point, shape- and
/// finiteness-checked.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub objective: f64,
    pub gradient: DVector<f64>,
    pub ineq: DVector<f64>,
    pub ineq_jacobian: DMatrix<f64>,
    pub eq: DVector<f64>,
    pub eq_jacobian: DMatrix<f64>,
}

impl Linearization {
    pub fn evaluate<P: NlpProblem + ?Sized>(problem: &P, z: &DVector<f64>) -> Result<Self> {
        let ProblemDims { n, m, p } = problem.dims();
        check_vector("iterate", z, n)?;
        let objective = eval_objective(problem, z)?;
        let gradient = problem.objective_gradient(z);
        check_vector("objective gradient", &gradient, n)?;
        let ineq = eval_ineq(problem, z)?;
        let ineq_jacobian = problem.ineq_jacobian(z);
        check_matrix("inequality Jacobian", &ineq_jacobian, (n, m))?;
        let eq = eval_eq(problem, z)?;
        let eq_jacobian = problem.eq_jacobian(z);
        check_matrix("equality Jacobian", &eq_jacobian, (n, p))?;
        Ok(Self {
            objective,
            gradient,
            ineq,
            ineq_jacobian,
            eq,
            eq_jacobian,
        })
    }

    pub fn dims(&self) -> ProblemDims {
        ProblemDims {
            n: self.gradient.len(),
            m: self.ineq.len(),
            p: self.eq.len(),
        }
    }

    /// `∇J + ∇g λ + ∇h ν`.
    pub fn lagrangian_gradient(&self, lambda: &DVector<f64>, nu: &DVector<f64>) -> DVector<f64> {
        &self.gradient + &self.ineq_jacobian * lambda + &self.eq_jacobian * nu
    }
}

/// Primal-dual iterate `(z, λ, ν, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualState {
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    pub s: DVector<f64>,
}

impl PrimalDualState {
    /// Zero multipliers and slacks around `z`.
    pub fn new(z: DVector<f64>, dims: ProblemDims) -> Self {
        Self {
            z,
            lambda: DVector::zeros(dims.m),
            nu: DVector::zeros(dims.p),
            s: DVector::zeros(dims.m),
        }
    }

    pub fn check_dims(&self, dims: ProblemDims) -> Result<()> {
        let ok = self.z.len() == dims.n
            && self.lambda.len() == dims.m
            && self.nu.len() == dims.p
            && self.s.len() == dims.m;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDims(format!(
                "state ({}, {}, {}, {}) does not match problem {:?}",
                self.z.len(),
                self.lambda.len(),
                self.nu.len(),
                self.s.len(),
                dims
            )))
        }
    }

    /// `self + t·step`.
    pub fn advanced(&self, step: &StepDirection, t: f64) -> Self {
        Self {
            z: &self.z + &step.d_z * t,
            lambda: &self.lambda + &step.d_lambda * t,
            nu: &self.nu + &step.d_nu * t,
            s: &self.s + &step.d_s * t,
        }
    }
}

/// Increment `(d_z, d_λ, d_ν, d_s)` of one major iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDirection {
    pub d_z: DVector<f64>,
    pub d_lambda: DVector<f64>,
    pub d_nu: DVector<f64>,
    pub d_s: DVector<f64>,
}

/// Infinity-norm residuals of the first-order optimality system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    pub stationarity: f64,
    pub ineq_feasibility: f64,
    pub eq_feasibility: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn from_linearization(lin: &Linearization, lambda: &DVector<f64>, nu: &DVector<f64>) -> Self {
        let stationarity = lin.lagrangian_gradient(lambda, nu).amax();
        let ineq_feasibility = lin.ineq.iter().fold(0.0_f64, |acc, &g| acc.max(g.max(0.0)));
        let eq_feasibility = lin.eq.amax();
        let complementarity = lin
            .ineq
            .iter()
            .zip(lambda.iter())
            .fold(0.0_f64, |acc, (g, l)| acc.max((g * l).abs()));
        Self {
            stationarity,
            ineq_feasibility,
            eq_feasibility,
            complementarity,
        }
    }

    pub fn feasibility(&self) -> f64 {
        self.ineq_feasibility.max(self.eq_feasibility)
    }
}

/// KKT residual of `(z, λ, ν)`; the slack `s` is not used.
pub fn kkt_residual<P: NlpProblem + ?Sized>(problem: &P, state: &PrimalDualState) -> Result<KktResidual> {
    state.check_dims(problem.dims())?;
    let lin = Linearization::evaluate(problem, &state.z)?;
    Ok(KktResidual::from_linearization(&lin, &state.lambda, &state.nu))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Gradient step size of the projection.
    pub alpha: f64,
    pub tol_stationarity: f64,
    pub tol_feasibility: f64,
    pub max_iterations: usize,
    /// Sufficient-decrease constant.
    pub sigma1: f64,
    /// Curvature constant, only used when `simplified_line_search` is off.
    pub sigma2: f64,
    pub simplified_line_search: bool,
    pub t_min: f64,
    /// Reuse the previous active set as the QP warm start.
    pub warm_start_qp: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            tol_stationarity: 1e-6,
            tol_feasibility: 1e-8,
            max_iterations: 3000,
            sigma1: 1e-4,
            sigma2: 0.4,
            simplified_line_search: true,
            t_min: 1e-10,
            warm_start_qp: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive and finite");
        }
        if !(self.tol_stationarity > 0.0 && self.tol_feasibility > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(0.0 < self.sigma1 && self.sigma1 <= self.sigma2 && self.sigma2 < 0.5) {
            return bad("line-search constants must satisfy 0 < sigma1 <= sigma2 < 1/2");
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return bad("t_min must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Relaxed stopping test: stationarity of the Lagrangian (evaluated with the
/// projection multipliers of the current step) and primal feasibility.
pub fn check_termination(residual: &KktResidual, config: &SolverConfig) -> bool {
    residual.stationarity <= config.tol_stationarity && residual.feasibility() <= config.tol_feasibility
}

/// Outcome of checking one callback against finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub callback: &'static str,
    pub passed: bool,
    /// Largest scaled deviation `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub worst_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<DerivativeCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const FD_REL_TOL: f64 = 1e-5;

struct Worst {
    err: f64,
    row: usize,
    col: usize,
    analytic: f64,
    numeric: f64,
}

/// Compares an analytic Jacobian (columns = gradients of each output)
/// against central differences of `f`.
fn compare_jacobian(
    z: &DVector<f64>,
    analytic: &DMatrix<f64>,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> Worst {
    let mut worst = Worst {
        err: 0.0,
        row: 0,
        col: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for j in 0..z.len() {
        let h = 1e-6 * z[j].abs().max(1.0);
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;
        let fd = (f(&zp) - f(&zm)) / (2.0 * h);
        for (k, &numeric) in fd.iter().enumerate() {
            let a = analytic[(j, k)];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if err > worst.err {
                worst = Worst {
                    err,
                    row: j,
                    col: k,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    worst
}

/// Evaluates every callback at `probe`, checks shapes and finiteness, and
/// compares each derivative with central finite differences.
pub fn validate_problem<P: NlpProblem + ?Sized>(problem: &P, probe: &DVector<f64>) -> Result<ValidationReport> {
    problem.dims().validate()?;
    let lin = Linearization::evaluate(problem, probe)?;

    let grad = DMatrix::from_column_slice(lin.gradient.len(), 1, lin.gradient.as_slice());
    type Map<'a> = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>;
    let cases: [(&'static str, DMatrix<f64>, Map<'_>); 3] = [
        (
            "objective gradient",
            grad,
            Box::new(|z| DVector::from_element(1, problem.objective(z))),
        ),
        ("inequality Jacobian", lin.ineq_jacobian.clone(), Box::new(|z| problem.ineq(z))),
        ("equality Jacobian", lin.eq_jacobian.clone(), Box::new(|z| problem.eq(z))),
    ];

    let mut checks = Vec::with_capacity(3);
    for (name, analytic, f) in cases {
        if analytic.ncols() == 0 {
            checks.push(DerivativeCheck {
                callback: name,
                passed: true,
                worst_error: 0.0,
            });
            continue;
        }
        let worst = compare_jacobian(probe, &analytic, f);
        if !worst.err.is_finite() {
            return Err(Error::NonFiniteEvaluation { what: name });
        }
        if worst.err > FD_REL_TOL {
            return Err(Error::DerivativeMismatch {
                what: name,
                row: worst.row,
                col: worst.col,
                analytic: worst.analytic,
                numeric: worst.numeric,
            });
        }
        checks.push(DerivativeCheck {
            callback: name,
            passed: true,
            worst_error: worst.err,
        });
    }
    Ok(ValidationReport { checks })
}
