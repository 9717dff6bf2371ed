//! Small built-in test problems with known solutions.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::nlp::{FnProblem, NlpProblem, SolverConfig};
use crate::slack::{lift, ClosedFormProjection, SLACK_FLOOR};
use crate::solver::{solve_sqp, solve_variant, solve_with_oracle, HessianStrategy, SolveReport};

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &[
    "unconstrained-quadratic",
    "circle",
    "circle-inequality",
    "rosenbrock-equality",
    "box-qp",
    "box-qp-lifted",
    "hs-mixed",
];

/// A registry entry.
pub struct BuiltinProblem {
    pub name: &'static str,
    pub summary: &'static str,
    pub problem: Box<dyn NlpProblem + Send + Sync>,
    /// Starting point in the coordinates of `problem`.
    pub z0: DVector<f64>,
    /// Known minimizer in the original (unlifted) coordinates.
    pub solution: DVector<f64>,
    /// `problem` is the squared-slack lifting of an inequality problem.
    pub lifted: bool,
}

impl std::fmt::Debug for BuiltinProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltinProblem")
            .field("name", &self.name)
            .field("z0", &self.z0)
            .field("solution", &self.solution)
            .field("lifted", &self.lifted)
            .finish_non_exhaustive()
    }
}

impl BuiltinProblem {
    /// Runs the projected-gradient variant, or the BFGS SQP baseline when
    /// `baseline` is set. Lifted problems use the closed-form projection.
    pub fn solve(&self, config: &SolverConfig, baseline: bool) -> Result<SolveReport> {
        if baseline {
            solve_sqp(&self.problem, &self.z0, config, HessianStrategy::DampedBfgs { initial_scale: 1.0 })
        } else if self.lifted {
            solve_with_oracle(&self.problem, &self.z0, config, &mut ClosedFormProjection::new())
        } else {
            solve_variant(&self.problem, &self.z0, config)
        }
    }

    /// Distance of the first `solution.len()` entries of `z` to the known minimizer.
    pub fn error(&self, z: &DVector<f64>) -> f64 {
        (z.rows(0, self.solution.len()) - &self.solution).norm()
    }
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// `min ‖z - target‖²`.
fn distance_objective(target: DVector<f64>) -> FnProblem {
    let t = target.clone();
    FnProblem::new(target.len(), move |z| (z - &t).norm_squared(), move |z| 2.0 * (z - &target))
}

/// `min ‖z - (2,1)‖²` subject to `‖z‖² - 1 = 0`.
pub fn circle() -> FnProblem {
    distance_objective(v(&[2.0, 1.0])).with_eq(
        1,
        |z| DVector::from_element(1, z.norm_squared() - 1.0),
        |z| DMatrix::from_column_slice(2, 1, (2.0 * z).as_slice()),
    )
}

/// `min ‖z - (2,1)‖²` subject to `‖z‖² - 1 <= 0`.
pub fn circle_inequality() -> FnProblem {
    distance_objective(v(&[2.0, 1.0])).with_ineq(
        1,
        |z| DVector::from_element(1, z.norm_squared() - 1.0),
        |z| DMatrix::from_column_slice(2, 1, (2.0 * z).as_slice()),
    )
}

/// `min ½‖z - (2,-3,0.5)‖²` subject to `-1 <= z <= 1`.
pub fn box_qp() -> FnProblem {
    let target = v(&[2.0, -3.0, 0.5]);
    let t = target.clone();
    FnProblem::new(3, move |z| 0.5 * (z - &t).norm_squared(), move |z| z - &target).with_ineq(
        6,
        |z| DVector::from_iterator(6, z.iter().map(|x| x - 1.0).chain(z.iter().map(|x| -x - 1.0))),
        |_| {
            let mut jac = DMatrix::zeros(3, 6);
            for i in 0..3 {
                jac[(i, i)] = 1.0;
                jac[(i, 3 + i)] = -1.0;
            }
            jac
        },
    )
}

/// Builds the entry called `name`.
pub fn builtin(name: &str) -> Option<BuiltinProblem> {
    let entry = match name {
        "unconstrained-quadratic" => {
            let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
            let c = v(&[-1.0, 2.0]);
            let (h2, c2) = (h.clone(), c.clone());
            BuiltinProblem {
                name: "unconstrained-quadratic",
                summary: "½zᵀHz + cᵀz with H = [[3,1],[1,2]], c = (-1,2)",
                problem: Box::new(FnProblem::new(
                    2,
                    move |z| 0.5 * z.dot(&(&h * z)) + c.dot(z),
                    move |z| &h2 * z + &c2,
                )),
                z0: v(&[0.0, 0.0]),
                solution: v(&[0.8, -1.4]),
                lifted: false,
            }
        }
        "circle" => BuiltinProblem {
            name: "circle",
            summary: "‖z - (2,1)‖² on the unit circle",
            problem: Box::new(circle()),
            z0: v(&[1.0, 0.0]),
            solution: v(&[2.0, 1.0]) / 5f64.sqrt(),
            lifted: false,
        },
        "circle-inequality" => BuiltinProblem {
            name: "circle-inequality",
            summary: "‖z - (2,1)‖² on the unit disc",
            problem: Box::new(circle_inequality()),
            z0: v(&[0.0, 0.0]),
            solution: v(&[2.0, 1.0]) / 5f64.sqrt(),
            lifted: false,
        },
        "rosenbrock-equality" => BuiltinProblem {
            name: "rosenbrock-equality",
            summary: "Rosenbrock function on the circle z1² + z2² = 2",
            problem: Box::new(
                FnProblem::new(
                    2,
                    |z| (1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2),
                    |z| {
                        let r = z[1] - z[0] * z[0];
                        v(&[-2.0 * (1.0 - z[0]) - 400.0 * z[0] * r, 200.0 * r])
                    },
                )
                .with_eq(
                    1,
                    |z| DVector::from_element(1, z.norm_squared() - 2.0),
                    |z| DMatrix::from_column_slice(2, 1, (2.0 * z).as_slice()),
                ),
            ),
            z0: v(&[1.2, 0.8]),
            solution: v(&[1.0, 1.0]),
            lifted: false,
        },
        "box-qp" => BuiltinProblem {
            name: "box-qp",
            summary: "½‖z - (2,-3,0.5)‖² on the box [-1,1]³",
            problem: Box::new(box_qp()),
            z0: v(&[0.0, 0.0, 0.0]),
            solution: v(&[1.0, -1.0, 0.5]),
            lifted: false,
        },
        "box-qp-lifted" => {
            let lifted = lift(box_qp());
            let z0 = lifted.initial_point(&v(&[0.0, 0.0, 0.0]), SLACK_FLOOR);
            BuiltinProblem {
                name: "box-qp-lifted",
                summary: "box-qp with squared slacks, solved by the closed-form projection",
                problem: Box::new(lifted),
                z0,
                solution: v(&[1.0, -1.0, 0.5]),
                lifted: true,
            }
        }
        "hs-mixed" => BuiltinProblem {
            name: "hs-mixed",
            summary: "‖z - (1,2,4)‖² with z1 + z2 + z3 = 3 and z1² + z2² <= 1",
            problem: Box::new(
                distance_objective(v(&[1.0, 2.0, 4.0]))
                    .with_ineq(
                        1,
                        |z| DVector::from_element(1, z[0] * z[0] + z[1] * z[1] - 1.0),
                        |z| DMatrix::from_column_slice(3, 1, &[2.0 * z[0], 2.0 * z[1], 0.0]),
                    )
                    .with_eq(
                        1,
                        |z| DVector::from_element(1, z.sum() - 3.0),
                        |_| DMatrix::from_element(3, 1, 1.0),
                    ),
            ),
            z0: v(&[0.0, 0.0, 0.0]),
            solution: v(&[-1.0 / 3.0, 2.0 / 3.0, 8.0 / 3.0]),
            lifted: false,
        },
        _ => return None,
    };
    Some(entry)
}
