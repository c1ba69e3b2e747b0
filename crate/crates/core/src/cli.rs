//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infeasible finite-horizon
//! problem, 4 not stabilizable (or infinite-horizon assumptions violated),
//! 5 missing gains file.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, StabilityReport, SweepError, SweepPoint};
use crate::controller::GainSchedule;
use crate::model::NcsModel;
use crate::riccati::{self, FiniteHorizonSolution, RiccatiError, StationaryGains};
use crate::simulate::{Aggregates, SimConfig, Simulator};

/// Scalar vehicle example with the destination shift already applied (`x̄_0 = -30`).
pub const UAV_CONFIG: &str = include_str!("../configs/uav.json");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Infeasible(RiccatiError),
    #[error("{0}")]
    NotStabilizable(RiccatiError),
    #[error("missing gains: {0}")]
    MissingGains(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::NotStabilizable(_) => 4,
            CliError::MissingGains(_) => 5,
        }
    }
}

impl From<RiccatiError> for CliError {
    fn from(e: RiccatiError) -> Self {
        match e {
            RiccatiError::InfeasibleProblem { .. } => CliError::Infeasible(e),
            _ => CliError::NotStabilizable(e),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Noise {
    On,
    Off,
}

#[derive(Debug, Parser)]
#[command(
    name = "ncs",
    version,
    about = "Optimal local/remote control over a lossy channel"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the finite-horizon coupled Riccati recursion.
    SolveFinite(RunArgs),
    /// Solve the stationary equations and report the stability margin.
    SolveInfinite(RunArgs),
    /// Monte Carlo simulation of the closed loop with a gains file.
    Simulate(RunArgs),
    /// Optimal finite-horizon cost over a grid of drop probabilities.
    SweepP(RunArgs),
    /// Reproduce the vehicle study: velocity, cost-vs-p and two E[x'x] curves.
    UavDemo(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model JSON (the uav-demo falls back to the bundled vehicle model).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    /// Override the model's drop probability.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = riccati::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = riccati::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value = "on")]
    pub noise: Noise,
    /// Drop-probability grid `start:stop:step`.
    #[arg(long, default_value = "0:1:0.1")]
    pub p_grid: String,
    /// Gains file for `simulate` (finite solution or stationary gains JSON).
    #[arg(long)]
    pub gains: Option<PathBuf>,
    /// Also write the CSV trace of rollout 0.
    #[arg(long)]
    pub trace: bool,
}

impl Default for RunArgs {
    fn default() -> Self {
        Self {
            config: None,
            out: PathBuf::from("out"),
            seed: 1,
            rollouts: 10_000,
            horizon: 100,
            p: None,
            tol: riccati::DEFAULT_TOL,
            max_iter: riccati::DEFAULT_MAX_ITER,
            noise: Noise::On,
            p_grid: "0:1:0.1".to_string(),
            gains: None,
            trace: false,
        }
    }
}

/// Parses `start:stop:step` (or a single value) into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| config_err(format!("bad grid value {s:?}")))
    };
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !step.is_finite() || step <= 0.0 || !start.is_finite() || !stop.is_finite() {
                return Err(config_err(format!("grid step must be positive: {spec:?}")));
            }
            let mut grid = Vec::new();
            let mut i = 0u32;
            loop {
                let v = start + f64::from(i) * step;
                if v > stop + 1e-9 * step {
                    break;
                }
                // Snap to 12 decimals so 0.1 * 3 prints as 0.3.
                grid.push((v * 1e12).round() / 1e12);
                i += 1;
            }
            Ok(grid)
        }
        _ => Err(config_err(format!(
            "grid must be start:stop:step, got {spec:?}"
        ))),
    }
}

fn load_model(args: &RunArgs, bundled_default: bool) -> Result<NcsModel, CliError> {
    let mut model = match (&args.config, bundled_default) {
        (Some(path), _) => NcsModel::load(path).map_err(config_err)?,
        (None, true) => NcsModel::from_json(UAV_CONFIG).map_err(config_err)?,
        (None, false) => return Err(config_err("--config is required")),
    };
    if let Some(p) = args.p {
        model.p = p;
    }
    model.validate().map_err(config_err)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialization is infallible");
    s.push('\n');
    s
}

fn matrix_columns(prefix: &str, rows: usize, cols: usize, header: &mut Vec<String>) {
    for i in 0..rows {
        for j in 0..cols {
            header.push(format!("{prefix}_{i}_{j}"));
        }
    }
}

fn gains_csv(sol: &FiniteHorizonSolution) -> String {
    let mut header = vec!["k".to_string()];
    matrix_columns("K", sol.k[0].nrows(), sol.k[0].ncols(), &mut header);
    matrix_columns(
        "Lambda",
        sol.lambda[0].nrows(),
        sol.lambda[0].ncols(),
        &mut header,
    );
    matrix_columns("M", sol.m[0].nrows(), sol.m[0].ncols(), &mut header);
    let mut out = header.join(",");
    out.push('\n');
    for k in 0..=sol.horizon {
        let _ = write!(out, "{k}");
        for m in [&sol.k[k], &sol.lambda[k], &sol.m[k]] {
            for row in m.row_iter() {
                for v in row.iter() {
                    let _ = write!(out, ",{v}");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSummary {
    pub horizon: usize,
    pub p: f64,
    pub optimal_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfiniteSummary {
    pub p: f64,
    pub stationary_average_cost: f64,
    pub iterations_used: usize,
    pub residual: f64,
}

/// Writes `solution.json`, `gains.csv` and `cost.json`.
pub fn solve_finite(
    model: &NcsModel,
    horizon: usize,
    out: &Path,
) -> Result<FiniteHorizonSolution, CliError> {
    prepare_out(out)?;
    let sol = riccati::backward_recursion(model, horizon)?;
    let summary = FiniteSummary {
        horizon,
        p: model.p,
        optimal_cost: riccati::finite_optimal_cost(model, &sol),
    };
    write(&out.join("solution.json"), &to_json(&sol))?;
    write(&out.join("gains.csv"), &gains_csv(&sol))?;
    write(&out.join("cost.json"), &to_json(&summary))?;
    Ok(sol)
}

/// Writes `stationary_gains.json`, `stability.json` and `summary.json`.
pub fn solve_infinite(
    model: &NcsModel,
    tol: f64,
    max_iter: usize,
    out: &Path,
) -> Result<(StationaryGains, StabilityReport), CliError> {
    prepare_out(out)?;
    let gains = riccati::value_iteration(model, tol, max_iter)?;
    let report = analysis::stability_margin(model, &gains);
    let summary = InfiniteSummary {
        p: model.p,
        stationary_average_cost: riccati::stationary_average_cost(&gains, &model.q_omega, model.p),
        iterations_used: gains.iterations_used,
        residual: gains.residual,
    };
    write(&out.join("stationary_gains.json"), &to_json(&gains))?;
    write(&out.join("stability.json"), &to_json(&report))?;
    write(&out.join("summary.json"), &to_json(&summary))?;
    Ok((gains, report))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GainsFile {
    Finite(FiniteHorizonSolution),
    Stationary(StationaryGains),
}

impl GainsFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::MissingGains(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn schedule(&self) -> Result<GainSchedule, CliError> {
        match self {
            GainsFile::Finite(sol) => GainSchedule::finite(sol),
            GainsFile::Stationary(g) => GainSchedule::stationary(g),
        }
        .map_err(config_err)
    }
}

fn curve_csv(series: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("series,k,value\n");
    for (name, values) in series {
        for (k, v) in values.iter().enumerate() {
            let _ = writeln!(out, "{name},{k},{v}");
        }
    }
    out
}

/// Writes `aggregates.json`, `ms_curve.csv` and, when requested, `trace_0.csv`.
pub fn simulate(
    model: &NcsModel,
    gains: &GainSchedule,
    config: SimConfig,
    out: &Path,
) -> Result<Aggregates, CliError> {
    prepare_out(out)?;
    let sim = Simulator::new(model, gains, config).map_err(config_err)?;
    let agg = sim.monte_carlo().map_err(config_err)?;
    write(&out.join("aggregates.json"), &to_json(&agg))?;
    write(
        &out.join("ms_curve.csv"),
        &curve_csv(&[
            (
                "mean_square_state".to_string(),
                agg.mean_square_state.clone(),
            ),
            (
                "std_error".to_string(),
                agg.mean_square_state_std_error.clone(),
            ),
        ]),
    )?;
    if config.record_trace {
        let trace = sim.rollout(0).map_err(config_err)?;
        write(&out.join("trace_0.csv"), &trace.to_csv())?;
    }
    Ok(agg)
}

fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("p,cost\n");
    for pt in points {
        let _ = writeln!(out, "{},{}", pt.p, pt.cost);
    }
    out
}

/// Writes `sweep.csv`.
pub fn sweep(
    model: &NcsModel,
    horizon: usize,
    grid: &[f64],
    out: &Path,
) -> Result<Vec<SweepPoint>, CliError> {
    prepare_out(out)?;
    let points = analysis::cost_sweep(model, horizon, grid).map_err(|e| match e {
        SweepError::Infeasible { source, .. } => CliError::Infeasible(source),
        other => config_err(other),
    })?;
    write(&out.join("sweep.csv"), &sweep_csv(&points))?;
    Ok(points)
}

fn sim_config(args: &RunArgs, noise: bool) -> SimConfig {
    SimConfig {
        seed: args.seed,
        rollouts: args.rollouts,
        horizon: args.horizon,
        noise_enabled: noise,
        record_trace: args.trace,
    }
}

fn label(p: f64) -> String {
    format!("p={p}")
}

/// The vehicle study. The noise-off and noise-on mean-square runs use drop
/// probabilities 0.5 and 0.6 unless `--p` overrides them; the velocity and
/// cost-vs-p outputs ignore `--p`.
pub fn uav_demo(args: &RunArgs) -> Result<(), CliError> {
    let base = load_model(
        &RunArgs {
            p: None,
            ..args.clone()
        },
        true,
    )?;
    let out = &args.out;
    prepare_out(out)?;
    if base.local_dim() != base.remote_dim() {
        return Err(config_err(
            "velocity v = v^L + v^R needs equal input dimensions",
        ));
    }

    // Velocity trajectories, one seeded rollout per drop probability.
    let mut velocity = Vec::new();
    for p in [0.0, 0.5, 1.0] {
        let model = base.with_p(p).validate().map_err(config_err)?;
        let sol = solve_finite(&model, args.horizon, &out.join(format!("finite_p{p}")))?;
        let schedule = GainSchedule::finite(&sol).map_err(config_err)?;
        let cfg = SimConfig {
            rollouts: 1,
            ..sim_config(args, true)
        };
        let trace = Simulator::new(&model, &schedule, cfg)
            .and_then(|s| s.rollout(0))
            .map_err(config_err)?;
        let v: Vec<f64> = trace
            .u_local
            .iter()
            .zip(&trace.u_remote)
            .map(|(l, r)| (l + r).sum())
            .collect();
        velocity.push((label(p), v));
    }
    write(&out.join("velocity.csv"), &curve_csv(&velocity))?;

    let grid = parse_grid("0:1:0.1")?;
    let points = sweep(&base, args.horizon, &grid, &out.join("sweep"))?;
    write(&out.join("cost_vs_p.csv"), &sweep_csv(&points))?;

    for (name, default_p, noise) in [("ms_noise_off", 0.5, false), ("ms_noise_on", 0.6, true)] {
        let p = args.p.unwrap_or(default_p);
        let model = base.with_p(p).validate().map_err(config_err)?;
        let dir = out.join(name);
        let (gains, _) = solve_infinite(&model, args.tol, args.max_iter, &dir)?;
        let schedule = GainSchedule::stationary(&gains).map_err(config_err)?;
        let agg = simulate(&model, &schedule, sim_config(args, noise), &dir)?;
        write(
            &out.join(format!("{name}.csv")),
            &curve_csv(&[(label(p), agg.mean_square_state)]),
        )?;
    }
    Ok(())
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::SolveFinite(args) => {
            let model = load_model(args, false)?;
            solve_finite(&model, args.horizon, &args.out).map(drop)
        }
        Command::SolveInfinite(args) => {
            let model = load_model(args, false)?;
            solve_infinite(&model, args.tol, args.max_iter, &args.out).map(drop)
        }
        Command::Simulate(args) => {
            let model = load_model(args, false)?;
            let path = match &args.gains {
                Some(p) => p.clone(),
                None => ["stationary_gains.json", "solution.json"]
                    .iter()
                    .map(|f| args.out.join(f))
                    .find(|p| p.exists())
                    .ok_or_else(|| {
                        CliError::MissingGains("no --gains file given or found in --out".into())
                    })?,
            };
            let schedule = GainsFile::load(&path)?.schedule()?;
            simulate(
                &model,
                &schedule,
                sim_config(args, args.noise == Noise::On),
                &args.out,
            )
            .map(drop)
        }
        Command::SweepP(args) => {
            let model = load_model(args, false)?;
            let grid = parse_grid(&args.p_grid)?;
            if grid.is_empty() {
                return Err(config_err("empty p-grid"));
            }
            sweep(&model, args.horizon, &grid, &args.out).map(drop)
        }
        Command::UavDemo(args) => uav_demo(args),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        let g = parse_grid("0:1:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[10], 1.0);
        assert_eq!(parse_grid("0").unwrap(), vec![0.0]);
        assert!(parse_grid("1:0:0.1").unwrap().is_empty());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("a:b").is_err());
    }

    #[test]
    fn bundled_config_is_the_vehicle_model() {
        let m = NcsModel::from_json(UAV_CONFIG).unwrap();
        assert_eq!(m, NcsModel::uav(0.5));
    }

    #[test]
    fn exit_code_table() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(
            CliError::from(RiccatiError::InfeasibleProblem {
                k: 0,
                which: riccati::Factor::Lambda
            })
            .exit_code(),
            3
        );
        assert_eq!(
            CliError::from(RiccatiError::AssumptionViolated(String::new())).exit_code(),
            4
        );
        assert_eq!(CliError::MissingGains(String::new()).exit_code(), 5);
    }
}
