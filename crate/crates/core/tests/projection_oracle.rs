mod common;

use common::{dense_kkt, random_problem, relative_error_vec};
use nalgebra::DVector;
use projgrad::mpc::{mpc_projection_step, CondensedEvaluator, LiftedParts};
use projgrad::nlp::{Linearization, NlpProblem};
use projgrad::pendulum::BenchmarkConfig;
use projgrad::qp::project_onto_linearization;
use projgrad::slack::{closed_form_projection, equality_projection, lift};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn closed_form_matches_qp_and_kkt_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0_f64;
    for case in 0..500 {
        let n = rng.gen_range(2..=5);
        let m = rng.gen_range(1..=3);
        let p = rng.gen_range(0..=1);
        let lifted = lift(random_problem(&mut rng, n, m, p));
        let v = DVector::from_fn(n + m, |i, _| {
            if i < n {
                rng.gen_range(-1.0..1.0)
            } else {
                rng.gen_range(0.2..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
            }
        });
        let alpha = rng.gen_range(0.01..1.0);
        let closed = closed_form_projection(&lifted, &v, alpha).unwrap();
        let qp = project_onto_linearization(&lifted, &v, alpha).unwrap();
        let (d_kkt, mu_kkt) = dense_kkt(&Linearization::evaluate(&lifted, &v).unwrap(), alpha);
        let err = relative_error_vec(&closed.d_v, &qp.d)
            .max(relative_error_vec(&closed.mu, &qp.nu))
            .max(relative_error_vec(&closed.d_v, &d_kkt))
            .max(relative_error_vec(&closed.mu, &mu_kkt));
        worst = worst.max(err);
        assert!(err <= 1e-10, "case {case}: {err:e}");
    }
    println!("worst closed-form deviation: {worst:e}");
}

#[test]
fn structured_mpc_step_matches_dense_gram_on_pendulum_instances() {
    let config = BenchmarkConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let x0 = [
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-3.5..3.5),
            rng.gen_range(-2.0..2.0),
        ];
        let evaluator = CondensedEvaluator::new(config.mpc_problem(&x0).unwrap());
        let u = DVector::from_fn(config.horizon, |_, _| rng.gen_range(-14.0..14.0));
        let mut parts = LiftedParts::split(&evaluator.initial_lifted_point(&u).unwrap());
        parts.y_c = rng.gen_range(0.1..2.0);
        let v = parts.join();
        let alpha = rng.gen_range(0.005..0.5);
        let structured = mpc_projection_step(&evaluator, &v, alpha).unwrap();
        let lin = Linearization::evaluate(&evaluator, &v).unwrap();
        let dense = equality_projection(&lin.gradient, &lin.eq, &lin.eq_jacobian, alpha).unwrap();
        let err = relative_error_vec(&structured.d_v, &dense.d_v).max(relative_error_vec(&structured.mu, &dense.mu));
        worst = worst.max(err);
        assert!(err <= 1e-9, "{err:e}");
        assert_eq!(evaluator.dims().n, v.len());
    }
    println!("worst structured deviation: {worst:e}");
}
