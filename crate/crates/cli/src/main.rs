use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use projgrad::pendulum::{closed_loop_simulate, BenchmarkConfig, ClosedLoopResult};
use projgrad::problems::{builtin, BUILTIN_NAMES};
use projgrad::{SolveReport, SolveStatus, SolverConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "projgrad", version, about = "Projected-gradient and SQP solvers for constrained NLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a built-in test problem.
    Solve {
        name: String,
        /// Gradient step size of the projection.
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        /// Use the SQP baseline instead of the projected-gradient variant.
        #[arg(long)]
        baseline: bool,
        /// Write the iteration trace as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed-loop inverted-pendulum benchmark.
    BenchPendulum {
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 15.0)]
        u_bound: f64,
        #[arg(long)]
        baseline: bool,
        /// Write the closed-loop trajectory as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-step solver statistics as CSV.
        #[arg(long)]
        steps_out: Option<PathBuf>,
    },
    /// List the built-in problems.
    List,
}

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Converged => 0,
        SolveStatus::MaxIterations => 2,
        SolveStatus::Infeasible | SolveStatus::Degenerate => 3,
        SolveStatus::LineSearchFailure => 4,
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_trace(path: &Path, report: &SolveReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["iter", "norm_dz", "phi", "rho", "t", "kkt_stationarity", "feasibility", "qp_iterations"])?;
    for rec in &report.trace {
        w.write_record([
            rec.iter.to_string(),
            fmt(rec.norm_dz),
            fmt(rec.phi_after),
            fmt(rec.rho),
            fmt(rec.t),
            fmt(rec.kkt_stationarity),
            fmt(rec.feasibility),
            rec.qp_iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory(path: &Path, result: &ClosedLoopResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["time", "x1", "x2", "x3", "x4", "u", "stage_cost"])?;
    for point in &result.trajectory {
        let mut row = vec![fmt(point.time)];
        row.extend(point.x.iter().map(|v| fmt(*v)));
        row.push(point.u.map_or_else(String::new, fmt));
        row.push(point.stage_cost.map_or_else(String::new, fmt));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_steps(path: &Path, result: &ClosedLoopResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["step", "status", "iterations", "stationarity", "feasibility", "terminal_value", "u0", "wall_ms"])?;
    for s in &result.per_step {
        w.write_record([
            s.step.to_string(),
            format!("{:?}", s.status),
            s.iterations.to_string(),
            fmt(s.stationarity),
            fmt(s.feasibility),
            fmt(s.terminal_value),
            s.inputs.first().map_or_else(String::new, |u| fmt(*u)),
            fmt(s.wall_time.as_secs_f64() * 1e3),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn solve(name: &str, alpha: f64, tol: f64, max_iter: usize, baseline: bool, out: Option<&Path>) -> Result<u8> {
    let Some(entry) = builtin(name) else {
        bail!("unknown problem `{name}`; try `projgrad list`");
    };
    let config = SolverConfig {
        alpha,
        tol_stationarity: tol,
        max_iterations: max_iter,
        ..SolverConfig::default()
    };
    let report = entry.solve(&config, baseline)?;
    let res = &report.final_residual;
    println!("problem        {name}");
    println!("algorithm      {}", if baseline { "sqp" } else { "projected-gradient" });
    println!("status         {:?}", report.status);
    println!("iterations     {}", report.iterations());
    println!("stationarity   {:.3e}", res.stationarity);
    println!("feasibility    {:.3e}", res.ineq_feasibility.max(res.eq_feasibility));
    println!("objective      {:.12}", entry.problem.objective(&report.final_state.z));
    let z: Vec<String> = report.final_state.z.iter().map(|v| format!("{v:.9}")).collect();
    println!("z              [{}]", z.join(", "));
    if let Some(err) = &report.failure {
        println!("failure        {err}");
    }
    if let Some(path) = out {
        write_trace(path, &report)?;
    }
    Ok(status_code(report.status))
}

fn bench_pendulum(
    steps: usize,
    alpha: Option<f64>,
    u_bound: f64,
    baseline: bool,
    out: Option<&Path>,
    steps_out: Option<&Path>,
) -> Result<u8> {
    let mut config = BenchmarkConfig {
        steps,
        u_bound,
        ..BenchmarkConfig::default()
    };
    if let Some(alpha) = alpha {
        config.solver.alpha = alpha;
    }
    if baseline {
        config = config.baseline();
    }
    let result = closed_loop_simulate(&config)?;
    let converged = result.per_step.iter().filter(|s| s.status == SolveStatus::Converged).count();
    let iterations: Vec<usize> = result.per_step.iter().map(|s| s.iterations).collect();
    println!("algorithm         {}", if baseline { "sqp" } else { "projected-gradient" });
    println!("steps             {}", result.per_step.len());
    println!("closed-loop cost  {:.6}", result.closed_loop_cost);
    println!("unscaled cost     {:.6}", result.unscaled_cost);
    println!("converged         {converged}/{}", result.per_step.len());
    if !iterations.is_empty() {
        let mean = iterations.iter().sum::<usize>() as f64 / iterations.len() as f64;
        println!("iterations        mean {mean:.1} max {}", iterations.iter().max().unwrap());
    }
    let last = result.trajectory.last().map(|p| p.x).unwrap_or(config.x0);
    println!("final state       [{:.6}, {:.6}, {:.6}, {:.6}]", last[0], last[1], last[2], last[3]);
    println!("wall time         {:.3} s", result.wall_time.as_secs_f64());
    if let Some(path) = out {
        write_trajectory(path, &result)?;
    }
    if let Some(path) = steps_out {
        write_steps(path, &result)?;
    }
    Ok(match result.aborted {
        Some((step, status)) => {
            println!("aborted at step {step}: {status:?}");
            status_code(status)
        }
        None => 0,
    })
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve {
            name,
            alpha,
            tol,
            max_iter,
            baseline,
            out,
        } => solve(&name, alpha, tol, max_iter, baseline, out.as_deref()),
        Command::BenchPendulum {
            steps,
            alpha,
            u_bound,
            baseline,
            out,
            steps_out,
        } => bench_pendulum(steps, alpha, u_bound, baseline, out.as_deref(), steps_out.as_deref()),
        Command::List => {
            for name in BUILTIN_NAMES {
                println!("{name:24} {}", builtin(name).unwrap().summary);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statuses_map_to_distinct_failure_codes() {
        assert_eq!(status_code(SolveStatus::Converged), 0);
        assert_eq!(status_code(SolveStatus::MaxIterations), 2);
        assert_eq!(status_code(SolveStatus::Infeasible), 3);
        assert_eq!(status_code(SolveStatus::Degenerate), 3);
        assert_eq!(status_code(SolveStatus::LineSearchFailure), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
