#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use projgrad::merit::{compute_slack, slack_variation};
use projgrad::nlp::{FnProblem, Linearization, NlpProblem, PrimalDualState, StepDirection};
use projgrad::qp::{project_linearization, LinearizedFeasibleSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0))
}

/// `MᵀM + shift I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n);
    m.tr_mul(&m) + DMatrix::identity(n, n) * shift
}

/// A QP instance with a nonempty feasible set.
pub struct QpInstance {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub set: LinearizedFeasibleSet,
}

pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> QpInstance {
    let h = random_spd(rng, n, 0.5);
    let c = random_vector(rng, n) * 3.0;
    let feasible = random_vector(rng, n);
    let a_ineq = random_matrix(rng, m, n);
    let a_eq = random_matrix(rng, p, n);
    let margin = DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.0));
    QpInstance {
        set: LinearizedFeasibleSet {
            b_ineq: -(&a_ineq * &feasible) - margin,
            a_ineq,
            b_eq: -(&a_eq * &feasible),
            a_eq,
        },
        h,
        c,
    }
}

/// KKT point from exhaustive enumeration of working sets.
pub struct OracleSolution {
    pub d: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    pub objective: f64,
}

/// Solves the equality-constrained KKT system for every subset of
/// inequality rows and keeps the primal-dual feasible candidate with the
/// lowest objective.
pub fn enumerate_qp(h: &DMatrix<f64>, c: &DVector<f64>, set: &LinearizedFeasibleSet) -> Option<OracleSolution> {
    let (n, m, p) = (set.n(), set.m(), set.p());
    let mut best: Option<OracleSolution> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
        let k = rows.len() + p;
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        rhs.rows_mut(0, n).copy_from(&(-c));
        for (r, &j) in rows.iter().enumerate() {
            for i in 0..n {
                kkt[(n + r, i)] = set.a_ineq[(j, i)];
                kkt[(i, n + r)] = set.a_ineq[(j, i)];
            }
            rhs[n + r] = -set.b_ineq[j];
        }
        for e in 0..p {
            let r = rows.len() + e;
            for i in 0..n {
                kkt[(n + r, i)] = set.a_eq[(e, i)];
                kkt[(i, n + r)] = set.a_eq[(e, i)];
            }
            rhs[n + r] = -set.b_eq[e];
        }
        if kkt.clone().svd(false, false).singular_values.min() < 1e-12 {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let d = sol.rows(0, n).into_owned();
        let primal_ok = set.ineq_values(&d).iter().all(|g| *g <= 1e-10);
        let dual_ok = (0..rows.len()).all(|r| sol[n + r] >= -1e-10);
        if !(primal_ok && dual_ok) {
            continue;
        }
        let mut lambda = DVector::zeros(m);
        for (r, &j) in rows.iter().enumerate() {
            lambda[j] = sol[n + r].max(0.0);
        }
        let nu = sol.rows(n + rows.len(), p).into_owned();
        let objective = 0.5 * d.dot(&(h * &d)) + c.dot(&d);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(OracleSolution { d, lambda, nu, objective });
        }
    }
    best
}

/// Central differences of a vector-valued map; column `i` is `∂f/∂x_i`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let rows = f(x).len();
    let mut jac = DMatrix::zeros(rows, x.len());
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        jac.set_column(i, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, step: f64) -> DVector<f64> {
    fd_jacobian(|y| DVector::from_element(1, f(y)), x, step).row(0).transpose()
}

/// `max|a - b| / max(1, max|b|)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

pub fn relative_error_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Worst relative finite-difference error over `J`, `g`, `h` of `problem` at `x`.
pub fn problem_derivative_error<P: NlpProblem + ?Sized>(problem: &P, x: &DVector<f64>) -> f64 {
    let grad = problem.objective_gradient(x);
    let fd = fd_gradient(|y| problem.objective(y), x, 1e-6);
    let mut worst = relative_error_vec(&grad, &fd);
    let dims = problem.dims();
    if dims.m > 0 {
        let jac = problem.ineq_jacobian(x).transpose();
        worst = worst.max(relative_error(&jac, &fd_jacobian(|y| problem.ineq(y), x, 1e-6)));
    }
    if dims.p > 0 {
        let jac = problem.eq_jacobian(x).transpose();
        worst = worst.max(relative_error(&jac, &fd_jacobian(|y| problem.eq(y), x, 1e-6)));
    }
    worst
}

/// `½zᵀQz + cᵀz` with quadratic inequalities and linear equalities.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> FnProblem {
    let q = random_spd(rng, n, 0.1);
    let c = random_vector(rng, n);
    let curvatures: Vec<DMatrix<f64>> = (0..m).map(|_| random_spd(rng, n, 0.0)).collect();
    let a = random_matrix(rng, n, m);
    let b = random_vector(rng, m);
    let e = random_matrix(rng, n, p);
    let f = random_vector(rng, p);
    let (q2, c2, curv2, a2) = (q.clone(), c.clone(), curvatures.clone(), a.clone());
    let e2 = e.clone();
    FnProblem::new(n, move |z| 0.5 * z.dot(&(&q * z)) + c.dot(z), move |z| &q2 * z + &c2)
        .with_ineq(
            m,
            move |z| DVector::from_fn(m, |j, _| 0.5 * z.dot(&(&curvatures[j] * z)) + a.column(j).dot(z) + b[j]),
            move |z| {
                let mut jac = a2.clone();
                for (j, g) in curv2.iter().enumerate() {
                    jac.set_column(j, &(g * z + a2.column(j)));
                }
                jac
            },
        )
        .with_eq(p, move |z| e.tr_mul(z) + &f, move |_| e2.clone())
}

/// Direct LU solve of `[I/α  ∇p; ∇pᵀ  0] [d; μ] = [-∇J; -p]`.
pub fn dense_kkt(lin: &Linearization, alpha: f64) -> (DVector<f64>, DVector<f64>) {
    let n = lin.gradient.len();
    let k = lin.eq.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    for i in 0..n {
        kkt[(i, i)] = 1.0 / alpha;
    }
    kkt.view_mut((0, n), (n, k)).copy_from(&lin.eq_jacobian);
    kkt.view_mut((n, 0), (k, n)).copy_from(&lin.eq_jacobian.transpose());
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&lin.gradient));
    rhs.rows_mut(n, k).copy_from(&(-&lin.eq));
    let sol = kkt.lu().solve(&rhs).unwrap();
    (sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned())
}

/// A state and direction as the driver builds them, with random duals.
pub fn driver_like_step<P: NlpProblem + ?Sized>(
    problem: &P,
    z: DVector<f64>,
    rng: &mut ChaCha8Rng,
    rho: f64,
) -> Option<(PrimalDualState, StepDirection, Linearization)> {
    let lin = Linearization::evaluate(problem, &z).ok()?;
    let qp = project_linearization(&lin, 0.1, None).ok()?;
    let dims = problem.dims();
    let mut state = PrimalDualState::new(z, dims);
    state.lambda = DVector::from_fn(dims.m, |_, _| rng.gen_range(0.0..2.0));
    state.nu = DVector::from_fn(dims.p, |_, _| rng.gen_range(-2.0..2.0));
    state.s = compute_slack(&lin.ineq, &state.lambda, rho);
    let step = StepDirection {
        d_s: slack_variation(&lin.ineq, &lin.ineq_jacobian.tr_mul(&qp.d), &state.s),
        d_z: qp.d,
        d_lambda: &qp.lambda - &state.lambda,
        d_nu: &qp.nu - &state.nu,
    };
    Some((state, step, lin))
}

pub fn random_state(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-4.0..4.0),
        rng.gen_range(-5.0..5.0),
    ]
}
