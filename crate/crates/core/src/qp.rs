//! Dense strictly convex QP kernel and the projection of the scaled
//! negative gradient onto the linearized feasible set.
//!
//! The kernel solves
//!
//! ```text
//!   min  ½ dᵀ H d + cᵀ d
//!   s.t. b_ineq + A_ineq d <= 0
//!        b_eq   + A_eq   d  = 0
//! ```
//!
//! with a primal active-set method. Each equality-constrained subproblem is
//! solved in range-space form through a Cholesky factor of `H`. When neither
//! the warm start nor the equality-only minimizer is feasible, a phase-1 QP
//! over `(d, t)` minimizes the total violation `Σ t` first.
//!
//! Multipliers follow the sign convention
//! `H d + c + A_ineqᵀ λ + A_eqᵀ ν = 0` with `λ >= 0`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::nlp::{Linearization, NlpProblem};

/// Feasibility and activity tolerance on `b + A d`.
pub const ACTIVE_TOL: f64 = 1e-9;
/// Largest admissible condition estimate of the active-constraint Gram matrix.
pub const MAX_GRAM_CONDITION: f64 = 1e12;
const EQ_RANK_TOL: f64 = 1e-10;
const PHASE1_REGULARIZATION: f64 = 1e-8;

/// `{d : b_ineq + A_ineq d <= 0, b_eq + A_eq d = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedFeasibleSet {
    /// `m × n`, rows are `∇g_j(z)ᵀ`.
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    /// `p × n`, rows are `∇h_k(z)ᵀ`.
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl LinearizedFeasibleSet {
    pub fn from_linearization(lin: &Linearization) -> Self {
        Self {
            a_ineq: lin.ineq_jacobian.transpose(),
            b_ineq: lin.ineq.clone(),
            a_eq: lin.eq_jacobian.transpose(),
            b_eq: lin.eq.clone(),
        }
    }

    /// Set with no constraints in `n` variables.
    pub fn unconstrained(n: usize) -> Self {
        Self {
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.a_ineq.ncols()
    }

    pub fn m(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn p(&self) -> usize {
        self.b_eq.len()
    }

    /// `b_ineq + A_ineq d`.
    pub fn ineq_values(&self, d: &DVector<f64>) -> DVector<f64> {
        &self.b_ineq + &self.a_ineq * d
    }

    /// `b_eq + A_eq d`.
    pub fn eq_values(&self, d: &DVector<f64>) -> DVector<f64> {
        &self.b_eq + &self.a_eq * d
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let shape_ok = self.a_ineq.nrows() == self.b_ineq.len()
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_eq.ncols() == n;
        if !shape_ok {
            return Err(Error::ShapeMismatch {
                what: "linearized feasible set",
                expected: (self.b_eq.len(), n),
                found: self.a_eq.shape(),
            });
        }
        if self.p() > 0 {
            let sv = self.a_eq.clone().singular_values();
            let max = sv.max();
            let min = sv.min();
            if self.p() > n || max == 0.0 || min <= EQ_RANK_TOL * max {
                return Err(Error::DegenerateActiveSet {
                    condition: if min > 0.0 { max / min } else { f64::INFINITY },
                });
            }
        }
        Ok(())
    }
}

/// Minimizer and multipliers of a QP over a [`LinearizedFeasibleSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub d: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    /// Final working set of inequality rows.
    pub active_set: Vec<usize>,
    /// `b_ineq + A_ineq d` at the returned minimizer.
    pub ineq_values: DVector<f64>,
    /// Active-set iterations, phase 1 included.
    pub iterations: usize,
}

/// Indices `j` with `|b_j + A_j d| <= 1e-9`.
pub fn extract_active_set(solution: &QpSolution) -> Vec<usize> {
    solution
        .ineq_values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() <= ACTIVE_TOL)
        .map(|(j, _)| j)
        .collect()
}

struct Eqp {
    x: DVector<f64>,
    nu: DVector<f64>,
    /// Multipliers of the working-set inequality rows, in working-set order.
    lambda_ws: DVector<f64>,
}

struct Kernel<'a> {
    chol: Cholesky<f64, Dyn>,
    hinv_c: DVector<f64>,
    set: &'a LinearizedFeasibleSet,
}

impl<'a> Kernel<'a> {
    fn new(h: &DMatrix<f64>, c: &DVector<f64>, set: &'a LinearizedFeasibleSet) -> Result<Self> {
        let chol = Cholesky::new(h.clone()).ok_or(Error::NotPositiveDefinite)?;
        let hinv_c = chol.solve(c);
        Ok(Self { chol, hinv_c, set })
    }

    fn working_matrix(&self, ws: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let (n, p) = (self.set.n(), self.set.p());
        let rows = p + ws.len();
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        for k in 0..p {
            a.row_mut(k).copy_from(&self.set.a_eq.row(k));
            b[k] = self.set.b_eq[k];
        }
        for (i, &j) in ws.iter().enumerate() {
            a.row_mut(p + i).copy_from(&self.set.a_ineq.row(j));
            b[p + i] = self.set.b_ineq[j];
        }
        (a, b)
    }

    fn gram(&self, a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let hinv_at = self.chol.solve(&a.transpose());
        let s = a * &hinv_at;
        (0.5 * (&s + s.transpose()), hinv_at)
    }

    fn condition(s: &DMatrix<f64>) -> f64 {
        if s.nrows() == 0 {
            return 1.0;
        }
        let eig = SymmetricEigen::new(s.clone()).eigenvalues;
        let (min, max) = (eig.min(), eig.max());
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    fn independent(&self, ws: &[usize]) -> bool {
        let (a, _) = self.working_matrix(ws);
        Self::condition(&self.gram(&a).0) <= MAX_GRAM_CONDITION
    }

    /// Minimizer of the QP with the working-set rows held as equalities.
    fn solve_eqp(&self, ws: &[usize]) -> Result<Eqp> {
        let p = self.set.p();
        let (a, b) = self.working_matrix(ws);
        if a.nrows() == 0 {
            return Ok(Eqp {
                x: -&self.hinv_c,
                nu: DVector::zeros(0),
                lambda_ws: DVector::zeros(0),
            });
        }
        let (s, hinv_at) = self.gram(&a);
        let condition = Self::condition(&s);
        if condition > MAX_GRAM_CONDITION {
            return Err(Error::DegenerateActiveSet { condition });
        }
        let chol = Cholesky::new(s).ok_or(Error::DegenerateActiveSet { condition })?;
        let mu = chol.solve(&(b - &a * &self.hinv_c));
        let x = -&self.hinv_c - &hinv_at * &mu;
        Ok(Eqp {
            x,
            nu: mu.rows(0, p).into_owned(),
            lambda_ws: mu.rows(p, ws.len()).into_owned(),
        })
    }

    fn feasible(&self, x: &DVector<f64>) -> bool {
        self.set.ineq_values(x).iter().all(|&v| v <= ACTIVE_TOL)
    }

    /// Greedy working set of rows active at `x`, skipping dependent rows.
    fn active_rows(&self, x: &DVector<f64>) -> Vec<usize> {
        let values = self.set.ineq_values(x);
        let mut ws = Vec::new();
        for (j, v) in values.iter().enumerate() {
            if v.abs() <= ACTIVE_TOL {
                ws.push(j);
                if !self.independent(&ws) {
                    ws.pop();
                }
            }
        }
        ws
    }

    /// Primal active-set iterations from a feasible `x` with a linearly
    /// independent working set.
    fn iterate(&self, mut x: DVector<f64>, mut ws: Vec<usize>, limit: usize) -> Result<(Eqp, Vec<usize>, usize)> {
        let mut iterations = 0;
        loop {
            if iterations >= limit {
                return Err(Error::MaxQpIterations { limit });
            }
            iterations += 1;
            let eqp = self.solve_eqp(&ws)?;
            let step = &eqp.x - &x;
            let scale = 1.0 + x.amax().max(eqp.x.amax());
            if step.amax() <= 1e-11 * scale {
                let lam_scale = 1.0 + eqp.lambda_ws.amax();
                let leaving = eqp
                    .lambda_ws
                    .iter()
                    .zip(&ws)
                    .filter(|(l, _)| **l < -1e-10 * lam_scale)
                    .min_by(|(la, ja), (lb, jb)| la.total_cmp(lb).then(ja.cmp(jb)))
                    .map(|(_, &j)| j);
                match leaving {
                    None => return Ok((eqp, ws, iterations)),
                    Some(j) => {
                        ws.retain(|&k| k != j);
                        x = eqp.x;
                    }
                }
            } else {
                let step_norm = step.norm();
                let mut length = 1.0;
                let mut blocking = None;
                for j in 0..self.set.m() {
                    if ws.contains(&j) {
                        continue;
                    }
                    let row = self.set.a_ineq.row(j);
                    let ap = row.dot(&step.transpose());
                    if ap <= 1e-12 * row.norm() * step_norm {
                        continue;
                    }
                    let slack = -(self.set.b_ineq[j] + row.dot(&x.transpose()));
                    let ratio = slack.max(0.0) / ap;
                    if ratio < length {
                        length = ratio;
                        blocking = Some(j);
                    }
                }
                x += step * length;
                if let Some(j) = blocking {
                    ws.push(j);
                    ws.sort_unstable();
                }
            }
        }
    }
}

/// Finds a point of the set through the phase-1 QP
/// `min δ/2 (‖d‖² + ‖t‖²) + Σ t  s.t. b + A d <= t, t >= 0, equalities`.
fn phase_one(set: &LinearizedFeasibleSet) -> Result<(DVector<f64>, usize)> {
    let (n, m, p) = (set.n(), set.m(), set.p());

    // Least-norm point of the equality rows.
    let d0 = {
        let identity = DMatrix::identity(n, n);
        let zero = DVector::zeros(n);
        let eq_only = LinearizedFeasibleSet {
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: set.a_eq.clone(),
            b_eq: set.b_eq.clone(),
        };
        Kernel::new(&identity, &zero, &eq_only)?.solve_eqp(&[])?.x
    };

    let mut a_ineq = DMatrix::zeros(2 * m, n + m);
    let mut b_ineq = DVector::zeros(2 * m);
    for j in 0..m {
        a_ineq.view_mut((j, 0), (1, n)).copy_from(&set.a_ineq.row(j));
        a_ineq[(j, n + j)] = -1.0;
        b_ineq[j] = set.b_ineq[j];
        a_ineq[(m + j, n + j)] = -1.0;
    }
    let mut a_eq = DMatrix::zeros(p, n + m);
    a_eq.view_mut((0, 0), (p, n)).copy_from(&set.a_eq);
    let lifted = LinearizedFeasibleSet {
        a_ineq,
        b_ineq,
        a_eq,
        b_eq: set.b_eq.clone(),
    };

    let h = DMatrix::identity(n + m, n + m) * PHASE1_REGULARIZATION;
    let mut c = DVector::zeros(n + m);
    c.rows_mut(n, m).fill(1.0);
    let kernel = Kernel::new(&h, &c, &lifted)?;

    let violation = set.ineq_values(&d0);
    let mut x0 = DVector::zeros(n + m);
    x0.rows_mut(0, n).copy_from(&d0);
    for j in 0..m {
        x0[n + j] = violation[j].max(0.0);
    }
    let ws = kernel.active_rows(&x0);
    let limit = 10 * (n + 3 * m + p).max(1);
    let (eqp, _, iterations) = kernel.iterate(x0, ws, limit)?;

    let d = eqp.x.rows(0, n).into_owned();
    let max_violation = |d: &DVector<f64>| set.ineq_values(d).iter().fold(0.0_f64, |acc, &v| acc.max(v));
    let mut best = (max_violation(&d), d);
    if let Some(r) = refine_feasible_point(set, &best.1) {
        let violation = max_violation(&r);
        if violation <= best.0 {
            best = (violation, r);
        }
    }
    if best.0 > ACTIVE_TOL {
        return Err(Error::InfeasibleLinearization { residual: best.0 });
    }
    Ok((best.1, iterations))
}

/// Closest point to `d` with the nearly active rows at `d` and the
/// equalities held exactly. Removes the roundoff of the regularized phase 1.
fn refine_feasible_point(set: &LinearizedFeasibleSet, d: &DVector<f64>) -> Option<DVector<f64>> {
    let n = set.n();
    let identity = DMatrix::identity(n, n);
    let c = -d;
    let kernel = Kernel::new(&identity, &c, set).ok()?;
    let values = set.ineq_values(d);
    let mut ws = Vec::new();
    for (j, v) in values.iter().enumerate() {
        if *v >= -1e-7 * (1.0 + set.b_ineq[j].abs()) {
            ws.push(j);
            if !kernel.independent(&ws) {
                ws.pop();
            }
        }
    }
    kernel.solve_eqp(&ws).ok().map(|eqp| eqp.x)
}

/// Solves `min ½ dᵀHd + cᵀd` over `set` for symmetric positive-definite `H`.
///
/// `warm_start` is a guess of the active inequality rows; it only affects
/// the iteration count, never the minimizer.
pub fn solve_strictly_convex_qp(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    set: &LinearizedFeasibleSet,
    warm_start: Option<&[usize]>,
) -> Result<QpSolution> {
    let n = set.n();
    if h.shape() != (n, n) || c.len() != n {
        return Err(Error::ShapeMismatch {
            what: "QP Hessian",
            expected: (n, n),
            found: h.shape(),
        });
    }
    set.validate()?;
    let kernel = Kernel::new(h, c, set)?;
    let (m, p) = (set.m(), set.p());
    let limit = 10 * (n + m + p);

    let mut start = None;
    if let Some(guess) = warm_start {
        let mut ws: Vec<usize> = Vec::new();
        for &j in guess {
            if j < m && !ws.contains(&j) {
                ws.push(j);
                if !kernel.independent(&ws) {
                    ws.pop();
                }
            }
        }
        ws.sort_unstable();
        if !ws.is_empty() {
            if let Ok(eqp) = kernel.solve_eqp(&ws) {
                if kernel.feasible(&eqp.x) {
                    start = Some((eqp.x, ws));
                }
            }
        }
    }
    if start.is_none() {
        let eqp = kernel.solve_eqp(&[])?;
        if kernel.feasible(&eqp.x) {
            start = Some((eqp.x, Vec::new()));
        }
    }
    let mut phase1_iterations = 0;
    let (x0, ws0) = match start {
        Some(s) => s,
        None => {
            let (d, its) = phase_one(set)?;
            phase1_iterations = its;
            let ws = kernel.active_rows(&d);
            (d, ws)
        }
    };

    let (eqp, ws, iterations) = kernel.iterate(x0, ws0, limit)?;
    let mut lambda = DVector::zeros(m);
    for (l, &j) in eqp.lambda_ws.iter().zip(&ws) {
        lambda[j] = l.max(0.0);
    }
    let ineq_values = set.ineq_values(&eqp.x);
    Ok(QpSolution {
        d: eqp.x,
        lambda,
        nu: eqp.nu,
        active_set: ws,
        ineq_values,
        iterations: iterations + phase1_iterations,
    })
}

/// Projection of `-α ∇J` onto an already evaluated linearization, i.e. the
/// QP with `H = I/α` and `c = ∇J`.
pub fn project_linearization(lin: &Linearization, alpha: f64, warm_start: Option<&[usize]>) -> Result<QpSolution> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig("alpha must be positive".into()));
    }
    let set = LinearizedFeasibleSet::from_linearization(lin);
    let n = set.n();
    let h = DMatrix::identity(n, n) / alpha;
    solve_strictly_convex_qp(&h, &lin.gradient, &set, warm_start)
}

/// `d_z = Proj_C(-α ∇J(z))` with `C` the linearized feasible set at `z`.
pub fn project_onto_linearization<P: NlpProblem + ?Sized>(
    problem: &P,
    z: &DVector<f64>,
    alpha: f64,
) -> Result<QpSolution> {
    let lin = Linearization::evaluate(problem, z)?;
    project_linearization(&lin, alpha, None)
}
