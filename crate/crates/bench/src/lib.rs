//! Deterministic fixtures shared by the criterion benchmarks in `benches/`.

use nalgebra::{DMatrix, DVector};
use projgrad::mpc::CondensedEvaluator;
use projgrad::pendulum::{BenchmarkConfig, PendulumModel};
use projgrad::problems::{box_qp, circle};
use projgrad::slack::lift;
use projgrad::{FnProblem, LiftedProblem, LinearizedFeasibleSet, Result};

/// Strictly convex QP with `n` variables and a box of `2n` rows, about half active.
pub fn box_qp_kernel(n: usize) -> (DMatrix<f64>, DVector<f64>, LinearizedFeasibleSet) {
    let h = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 + i as f64 * 0.1 } else { 0.05 });
    let c = DVector::from_fn(n, |i, _| if i % 2 == 0 { 3.0 } else { -0.3 });
    let identity = DMatrix::<f64>::identity(n, n);
    let mut a_ineq = DMatrix::zeros(2 * n, n);
    a_ineq.rows_mut(0, n).copy_from(&identity);
    a_ineq.rows_mut(n, n).copy_from(&(-identity));
    let set = LinearizedFeasibleSet {
        a_ineq,
        b_ineq: DVector::from_element(2 * n, -1.0),
        a_eq: DMatrix::zeros(0, n),
        b_eq: DVector::zeros(0),
    };
    (h, c, set)
}

/// Lifted box QP at a point with every slack away from zero.
pub fn lifted_box_qp() -> (LiftedProblem<FnProblem>, DVector<f64>) {
    let lifted = lift(box_qp());
    let v = lifted.initial_point(&DVector::from_element(3, 0.25), 0.1);
    (lifted, v)
}

/// Circle problem with its starting point.
pub fn circle_start() -> (FnProblem, DVector<f64>) {
    (circle(), DVector::from_column_slice(&[1.0, 0.0]))
}

/// Condensed pendulum MPC at the hanging state and a lifted point built from zero inputs.
pub fn pendulum_mpc(horizon: usize) -> Result<(CondensedEvaluator<PendulumModel>, DVector<f64>)> {
    let config = BenchmarkConfig {
        horizon,
        ..BenchmarkConfig::default()
    };
    let evaluator = CondensedEvaluator::new(config.mpc_problem(&config.x0)?);
    let v = evaluator.initial_lifted_point(&DVector::zeros(horizon))?;
    Ok((evaluator, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use projgrad::solve_strictly_convex_qp;

    #[test]
    fn fixtures_are_well_formed() {
        let (h, c, set) = box_qp_kernel(6);
        let sol = solve_strictly_convex_qp(&h, &c, &set, None).unwrap();
        assert!(set.ineq_values(&sol.d).iter().all(|g| *g <= 1e-12));
        let (evaluator, v) = pendulum_mpc(8).unwrap();
        assert_eq!(v.len(), 25);
        assert_eq!(evaluator.problem().input_len(), 8);
        let (lifted, v) = lifted_box_qp();
        assert_eq!(v.len(), 9);
        assert!(lifted.split(&v).1.iter().all(|y| y.abs() > 0.0));
    }
}
