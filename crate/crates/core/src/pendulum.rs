//! Cart-pole model, explicit Euler discretization and the closed-loop
//! swing-up benchmark.
//!
//! State `x = (p, ṗ, θ, θ̇)` with `θ = 0` upright and `θ = π` hanging; the
//! input is the horizontal force on the cart.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mpc::{
    shift_warm_start, solve_dare, CondensedEvaluator, CondensedInequalityProblem, DynamicsModel, LiftedParts,
    MpcProblem, MpcProjection,
};
use crate::nlp::SolverConfig;
use crate::solver::{solve_sqp, solve_with_oracle, HessianStrategy, SolveReport, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// Rod length [m].
    pub l: f64,
    /// Tip mass [kg].
    pub m: f64,
    /// Cart mass [kg].
    pub cart_mass: f64,
    /// Gravity [m/s²].
    pub g: f64,
    /// Sampling time [s].
    pub ts: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            l: 0.3,
            m: 0.2,
            cart_mass: 0.5,
            g: 10.0,
            ts: 0.1,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        if [self.l, self.m, self.cart_mass, self.g, self.ts].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("pendulum parameters must be positive".into()))
        }
    }
}

/// Continuous-time right-hand side.
pub fn pendulum_ode(params: &PendulumParams, x: &[f64; 4], u: f64) -> [f64; 4] {
    let PendulumParams { l, m, cart_mass, g, .. } = *params;
    let (s, c) = x[2].sin_cos();
    let den = cart_mass + m * s * s;
    let w2 = x[3] * x[3];
    [
        x[1],
        (m * g * s * c - m * l * w2 * s + u) / den,
        x[3],
        g / l * s + (m * g * s * c * c + u * c - m * l * w2 * s * c) / (l * den),
    ]
}

/// `x⁺ = x + Ts f(x, u)`.
pub fn euler_step(params: &PendulumParams, x: &[f64; 4], u: f64) -> [f64; 4] {
    let f = pendulum_ode(params, x, u);
    std::array::from_fn(|i| x[i] + params.ts * f[i])
}

/// Jacobians of [`euler_step`]: `F = I + Ts ∂f/∂x` and `G = Ts ∂f/∂u`.
pub fn pendulum_jacobians(params: &PendulumParams, x: &[f64; 4], u: f64) -> ([[f64; 4]; 4], [f64; 4]) {
    let PendulumParams { l, m, cart_mass, g, ts } = *params;
    let (s, c) = x[2].sin_cos();
    let w = x[3];
    let den = cart_mass + m * s * s;
    let dden = 2.0 * m * s * c;

    let n2 = m * g * s * c - m * l * w * w * s + u;
    let dn2 = m * g * (c * c - s * s) - m * l * w * w * c;
    let n4 = m * g * s * c * c + u * c - m * l * w * w * s * c;
    let dn4 = m * g * (c * c * c - 2.0 * s * s * c) - u * s - m * l * w * w * (c * c - s * s);

    let f23 = (dn2 * den - n2 * dden) / (den * den);
    let f24 = -2.0 * m * l * w * s / den;
    let f43 = g / l * c + (dn4 * den - n4 * dden) / (l * den * den);
    let f44 = -2.0 * m * w * s * c / den;

    let jac = [
        [1.0, ts, 0.0, 0.0],
        [0.0, 1.0, ts * f23, ts * f24],
        [0.0, 0.0, 1.0, ts],
        [0.0, 0.0, ts * f43, 1.0 + ts * f44],
    ];
    let input = [0.0, ts / den, 0.0, ts * c / (l * den)];
    (jac, input)
}

fn as_array(x: &DVector<f64>) -> [f64; 4] {
    [x[0], x[1], x[2], x[3]]
}

/// [`DynamicsModel`] view of the Euler-discretized cart-pole.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PendulumModel {
    pub params: PendulumParams,
}

impl DynamicsModel for PendulumModel {
    fn nx(&self) -> usize {
        4
    }

    fn nu(&self) -> usize {
        1
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&euler_step(&self.params, &as_array(x), u[0]))
    }

    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let (f, _) = pendulum_jacobians(&self.params, &as_array(x), u[0]);
        DMatrix::from_fn(4, 4, |i, j| f[i][j])
    }

    fn jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let (_, g) = pendulum_jacobians(&self.params, &as_array(x), u[0]);
        DMatrix::from_column_slice(4, 1, &g)
    }
}

/// Optimizer used inside the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    /// Projected-gradient variant with the structured MPC projection.
    Variant,
    /// SQP on the inequality form over `u` with the given Hessian model.
    Sqp(HessianStrategy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub params: PendulumParams,
    pub horizon: usize,
    /// Diagonal of `Q`.
    pub q_diag: [f64; 4],
    pub r: f64,
    /// Symmetric input bound `|u| <= u_bound`.
    pub u_bound: f64,
    /// Terminal level `c` of `½ x_NᵀPx_N <= c`.
    pub terminal_level: f64,
    pub steps: usize,
    pub x0: [f64; 4],
    pub solver: SolverConfig,
    pub algorithm: Algorithm,
}

/// Step size of the projected-gradient variant on this benchmark.
pub const BENCHMARK_ALPHA: f64 = 0.02;

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            params: PendulumParams::default(),
            horizon: 8,
            q_diag: [10.0, 0.1, 100.0, 0.1],
            r: 1.0,
            u_bound: 15.0,
            terminal_level: 1.5,
            steps: 50,
            x0: [0.0, 0.0, std::f64::consts::PI, 0.0],
            solver: SolverConfig {
                alpha: BENCHMARK_ALPHA,
                ..SolverConfig::default()
            },
            algorithm: Algorithm::Variant,
        }
    }
}

impl BenchmarkConfig {
    /// Same settings solved by the SQP baseline with a damped BFGS Hessian.
    pub fn baseline(&self) -> Self {
        Self {
            algorithm: Algorithm::Sqp(HessianStrategy::DampedBfgs { initial_scale: 1.0 }),
            ..self.clone()
        }
    }

    pub fn q(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.q_diag))
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.r)
    }

    /// Terminal weight from the Riccati equation of the linearization at the
    /// upright equilibrium.
    pub fn terminal_weight(&self) -> Result<DMatrix<f64>> {
        let model = PendulumModel { params: self.params };
        let zero = DVector::zeros(4);
        let u0 = DVector::zeros(1);
        solve_dare(&model.jac_x(&zero, &u0), &model.jac_u(&zero, &u0), &self.q(), &self.r_matrix())
    }

    /// MPC problem at initial state `x0`.
    pub fn mpc_problem(&self, x0: &[f64; 4]) -> Result<MpcProblem<PendulumModel>> {
        self.params.validate()?;
        MpcProblem::new(
            PendulumModel { params: self.params },
            self.horizon,
            self.q(),
            self.r_matrix(),
            self.terminal_weight()?,
            &DVector::from_element(1, -self.u_bound),
            &DVector::from_element(1, self.u_bound),
            self.terminal_level,
            DVector::from_column_slice(x0),
        )
    }

    /// `½ (xᵀQx + uᵀRu)`.
    pub fn stage_cost(&self, x: &[f64; 4], u: f64) -> f64 {
        0.5 * (x.iter().zip(&self.q_diag).map(|(xi, qi)| qi * xi * xi).sum::<f64>() + self.r * u * u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub x: [f64; 4],
    /// Applied input, `None` on the final row.
    pub u: Option<f64>,
    /// `Ts · ½ (xᵀQx + uᵀRu)`, `None` on the final row.
    pub stage_cost: Option<f64>,
}

/// Summary of one MPC solve.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub step: usize,
    pub status: SolveStatus,
    pub iterations: usize,
    pub stationarity: f64,
    pub feasibility: f64,
    /// `½ x_NᵀPx_N` of the predicted trajectory at the returned inputs.
    pub terminal_value: f64,
    /// Predicted inputs `u_0, …, u_{N-1}`.
    pub inputs: Vec<f64>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    pub trajectory: Vec<TrajectoryPoint>,
    /// `Ts Σ_k ½ (x_kᵀQx_k + u_kᵀRu_k)` over the applied steps.
    pub closed_loop_cost: f64,
    /// The same sum without the factor `Ts`.
    pub unscaled_cost: f64,
    pub per_step: Vec<StepSummary>,
    /// Full reports of every solve, in step order.
    pub reports: Vec<SolveReport>,
    pub terminal_weight: DMatrix<f64>,
    pub wall_time: Duration,
    /// Step and status at which the loop stopped early.
    pub aborted: Option<(usize, SolveStatus)>,
}

/// Runs the closed loop: solve, apply `u_0`, advance the plant by one Euler
/// step and shift the input sequence as the next warm start.
pub fn closed_loop_simulate(config: &BenchmarkConfig) -> Result<ClosedLoopResult> {
    let start = Instant::now();
    config.solver.validate()?;
    let mut problem = config.mpc_problem(&config.x0)?;
    let terminal_weight = problem.p.clone();
    let len = problem.input_len();
    problem.x0 = DVector::from_column_slice(&config.x0);
    let mut evaluator = CondensedEvaluator::new(problem);

    let mut x = config.x0;
    let mut u_guess = DVector::zeros(len);
    let mut trajectory = Vec::with_capacity(config.steps + 1);
    let mut per_step = Vec::with_capacity(config.steps);
    let mut reports = Vec::with_capacity(config.steps);
    let (mut cost, mut unscaled) = (0.0, 0.0);
    let mut aborted = None;

    for step in 0..config.steps {
        evaluator.set_initial_state(DVector::from_column_slice(&x));
        let (report, u) = match &config.algorithm {
            Algorithm::Variant => {
                let v0 = evaluator.initial_lifted_point(&u_guess)?;
                let mut oracle = MpcProjection::new(&evaluator);
                let report = solve_with_oracle(&evaluator, &v0, &config.solver, &mut oracle)?;
                let u = LiftedParts::split(&report.final_state.z).u;
                (report, u)
            }
            Algorithm::Sqp(hessian) => {
                let nlp = CondensedInequalityProblem::new(&evaluator);
                let report = solve_sqp(&nlp, &u_guess, &config.solver, hessian.clone())?;
                let u = report.final_state.z.clone();
                (report, u)
            }
        };
        let sweep = evaluator.sweep(&u)?;
        per_step.push(StepSummary {
            step,
            status: report.status,
            iterations: report.iterations(),
            stationarity: report.final_residual.stationarity,
            feasibility: report.final_residual.feasibility(),
            terminal_value: sweep.terminal_value,
            inputs: u.iter().copied().collect(),
            wall_time: report.wall_time,
        });
        let status = report.status;
        reports.push(report);
        if !matches!(status, SolveStatus::Converged | SolveStatus::MaxIterations) {
            aborted = Some((step, status));
            break;
        }

        let applied = u[0];
        let stage = config.stage_cost(&x, applied);
        unscaled += stage;
        cost += config.params.ts * stage;
        trajectory.push(TrajectoryPoint {
            time: step as f64 * config.params.ts,
            x,
            u: Some(applied),
            stage_cost: Some(config.params.ts * stage),
        });
        x = euler_step(&config.params, &x, applied);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteEvaluation { what: "plant state" });
        }
        u_guess = shift_warm_start(&u, 1);
    }
    trajectory.push(TrajectoryPoint {
        time: trajectory.len() as f64 * config.params.ts,
        x,
        u: None,
        stage_cost: None,
    });

    Ok(ClosedLoopResult {
        trajectory,
        closed_loop_cost: cost,
        unscaled_cost: unscaled,
        per_step,
        reports,
        terminal_weight,
        wall_time: start.elapsed(),
        aborted,
    })
}
