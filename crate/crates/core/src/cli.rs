//! Batch front-end behind the `popharvest` binary.
//!
//! Every command reads a scenario file and writes plain CSV or JSON into the
//! scenario's output directory. Exit codes: 0 success, 1 bad input (including
//! a failed model assumption), 2 no convergence or a failed audit.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ControlAction, Grid, TransitionKernel};
use crate::model::Model;
use crate::scenario::Scenario;
use crate::simulate::{estimate_value, simulate_path, Strategy};
use crate::solver::{extract_thresholds_1d, solve, SolveReport, Thresholds1D};
use crate::verify::{audit, audit_path, AuditOptions};

/// Number of worker threads; unset or 0 lets the pool decide.
pub const THREADS_ENV: &str = "POPHARVEST_THREADS";

pub const VALUE_FILE: &str = "value.csv";
pub const POLICY_FILE: &str = "policy.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const AUDIT_JSON: &str = "audit.json";
pub const AUDIT_TEXT: &str = "audit.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_VALUES_FILE: &str = "sweep_values.csv";

#[derive(Debug, Parser)]
#[command(name = "popharvest", version, about = "Optimal harvesting and seeding of stochastic populations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the scenario; writes value.csv, policy.csv and summary.json.
    Solve { scenario: PathBuf },
    /// Monte Carlo estimate of the solved policy's payoff from one state.
    Simulate {
        scenario: PathBuf,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x0: Vec<f64>,
        /// Also dump one path (seeded like the first estimate path) to this CSV.
        #[arg(long)]
        path_csv: Option<PathBuf>,
    },
    /// Audit the solved value function and policy; writes audit.json and audit.txt.
    Verify {
        scenario: PathBuf,
        /// Random state pairs for the pairwise comparison check.
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
    },
    /// Solve at several spacings and compare successive solutions.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        h: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok = 0,
    InputError = 1,
    Failed = 2,
}

impl Outcome {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Configures the global worker pool from [`THREADS_ENV`].
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}={raw:?} is not a thread count")))?;
    if n > 0 {
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> i32 {
    let result = init_threads().and_then(|()| match cli.command {
        Command::Solve { scenario } => run_solve(&scenario),
        Command::Simulate { scenario, x0, path_csv } => run_simulate(&scenario, &x0, path_csv.as_deref()),
        Command::Verify { scenario, pairs } => run_verify(&scenario, pairs),
        Command::Sweep { scenario, h } => run_sweep(&scenario, &h),
    });
    match result {
        Ok(outcome) => outcome.code(),
        Err(e) => {
            eprintln!("error: {e}");
            Outcome::InputError.code()
        }
    }
}

/// Solver bookkeeping saved next to the CSV tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub preset: String,
    pub h: f64,
    pub upper: f64,
    pub states: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_increment: f64,
    pub tolerance: f64,
    pub clamped_states: usize,
    pub clamped_and_diffusing: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds1D>,
}

fn create_dir(dir: &FsPath) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &FsPath, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &FsPath) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Scenario(format!("{}: {other:?}", path.display())),
    })
}

fn coord_header(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("{prefix}{i}")).collect()
}

fn write_solution(dir: &FsPath, grid: &Grid, report: &SolveReport) -> Result<()> {
    let d = grid.dim();
    let mut values = csv_writer(&dir.join(VALUE_FILE))?;
    let mut policy = csv_writer(&dir.join(POLICY_FILE))?;
    let mut header = coord_header("x", d);
    header.push("value".into());
    values.write_record(&header)?;
    header[d] = "action".into();
    policy.write_record(&header)?;
    for s in 0..grid.len() {
        let mut row: Vec<String> = grid.coords(s).iter().map(f64::to_string).collect();
        row.push(report.values[s].to_string());
        values.write_record(&row)?;
        row[d] = report.policy[s].code().to_string();
        policy.write_record(&row)?;
    }
    values.flush().map_err(|e| Error::io(dir.join(VALUE_FILE), e))?;
    policy.flush().map_err(|e| Error::io(dir.join(POLICY_FILE), e))?;
    Ok(())
}

fn read_table(path: &FsPath, dim: usize, grid: &Grid) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Scenario(format!("{}: {other:?}", path.display())),
    })?;
    let mut out = Vec::with_capacity(grid.len());
    for (s, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim + 1 || s >= grid.len() {
            return Err(Error::Scenario(format!("{}: does not match the scenario grid", path.display())));
        }
        let expected = grid.coords(s);
        for (i, want) in expected.iter().enumerate() {
            let got: f64 = rec[i]
                .parse()
                .map_err(|_| Error::Scenario(format!("{}: bad coordinate {:?}", path.display(), &rec[i])))?;
            if (got - want).abs() > 1e-9 * grid.h() {
                return Err(Error::Scenario(format!("{}: row {} is not state {expected:?}", path.display(), s + 1)));
            }
        }
        out.push(rec[dim].to_string());
    }
    if out.len() != grid.len() {
        return Err(Error::Scenario(format!("{}: does not match the scenario grid", path.display())));
    }
    Ok(out)
}

/// Reads a solution written by [`run_solve`].
pub fn load_solution(scenario: &Scenario, grid: &Grid) -> Result<SolveReport> {
    let dir = &scenario.output;
    let d = grid.dim();
    let values = read_table(&dir.join(VALUE_FILE), d, grid)?
        .iter()
        .map(|v| v.parse::<f64>().map_err(|_| Error::Scenario(format!("{VALUE_FILE}: bad value {v:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let policy = read_table(&dir.join(POLICY_FILE), d, grid)?
        .iter()
        .map(|c| {
            let code: i32 = c.parse().map_err(|_| Error::Scenario(format!("{POLICY_FILE}: bad action {c:?}")))?;
            ControlAction::from_code(code, d)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary_path = dir.join(SUMMARY_FILE);
    let summary: Option<SolveSummary> = match fs::read_to_string(&summary_path) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    Ok(SolveReport {
        values,
        policy,
        iterations: summary.as_ref().map_or(0, |s| s.iterations),
        final_increment: summary.as_ref().map_or(f64::NAN, |s| s.final_increment),
        converged: summary.as_ref().is_some_and(|s| s.converged),
        tolerance: scenario.solver.tolerance,
        clamped: vec![false; grid.len()],
        wall_time: Default::default(),
    })
}

fn solve_scenario(scenario: &Scenario) -> Result<(Model, Grid, TransitionKernel, SolveReport)> {
    let (model, validation) = scenario.checked_model()?;
    if !validation.passed() {
        eprintln!("note: drift growth bound not confirmed on the grid; the linear bound audit is informational");
    }
    let grid = scenario.build_grid()?;
    let kernel = TransitionKernel::build(&model, &grid)?;
    let report = solve(&model, &grid, &kernel, &scenario.solver.options())?;
    Ok((model, grid, kernel, report))
}

pub fn run_solve(path: &FsPath) -> Result<Outcome> {
    let scenario = Scenario::load(path)?;
    let (_, grid, _, report) = solve_scenario(&scenario)?;
    create_dir(&scenario.output)?;
    write_solution(&scenario.output, &grid, &report)?;
    let summary = SolveSummary {
        preset: scenario.preset().to_string(),
        h: grid.h(),
        upper: grid.upper(),
        states: grid.len(),
        iterations: report.iterations,
        converged: report.converged,
        final_increment: report.final_increment,
        tolerance: report.tolerance,
        clamped_states: report.clamped_count(),
        clamped_and_diffusing: report.clamped_and_diffusing(),
        thresholds: (grid.dim() == 1).then(|| extract_thresholds_1d(&report.policy, &grid)).transpose()?,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    write_text(&scenario.output.join(SUMMARY_FILE), &(json + "\n"))?;
    println!(
        "{}: {} states, {} iterations, last increment {:e}, {}",
        scenario.preset(),
        grid.len(),
        report.iterations,
        report.final_increment,
        if report.converged { "converged" } else { "NOT converged" }
    );
    if let Some(t) = summary.thresholds {
        println!("seed below {}, harvest from {}, contiguous: {}", t.lower, t.upper, t.contiguous);
    }
    Ok(if report.converged { Outcome::Ok } else { Outcome::Failed })
}

pub fn run_simulate(path: &FsPath, x0: &[f64], path_csv: Option<&FsPath>) -> Result<Outcome> {
    let scenario = Scenario::load(path)?;
    let (model, _) = scenario.checked_model()?;
    let grid = scenario.build_grid()?;
    if x0.len() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: x0.len() });
    }
    let report = load_solution(&scenario, &grid)?;
    let solver_value = report.values[grid.nearest(x0)];
    let strategy = Strategy::from_policy(grid.clone(), report.policy)?;
    let opts = scenario.simulate.options();
    let est = estimate_value(&model, &strategy, x0, &opts)?;
    if let Some(out) = path_csv {
        let p = simulate_path(&model, &strategy, x0, opts.horizon, opts.dt, opts.base_seed)?;
        let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
        p.write_csv(file)?;
    }
    let discrepancy = (est.mean - solver_value).abs();
    let tolerance = 3.0 * est.std_error + 0.05 * solver_value.abs();
    let mut w = csv_writer(&scenario.output.join(ESTIMATE_FILE))?;
    let mut header = coord_header("x0_", grid.dim());
    header.extend(
        ["mean", "std_error", "paths", "truncation_bound", "solver_value", "discrepancy", "tolerance"]
            .map(String::from),
    );
    w.write_record(&header)?;
    let mut row: Vec<String> = x0.iter().map(f64::to_string).collect();
    row.extend([
        est.mean.to_string(),
        est.std_error.to_string(),
        est.paths.to_string(),
        est.truncation_bound.to_string(),
        solver_value.to_string(),
        discrepancy.to_string(),
        tolerance.to_string(),
    ]);
    w.write_record(&row)?;
    w.flush().map_err(|e| Error::io(scenario.output.join(ESTIMATE_FILE), e))?;
    println!(
        "estimate {} ± {} over {} paths; solver {}; discrepancy {} (tolerance {})",
        est.mean, est.std_error, est.paths, solver_value, discrepancy, tolerance
    );
    Ok(Outcome::Ok)
}

pub fn run_verify(path: &FsPath, pairs: usize) -> Result<Outcome> {
    let scenario = Scenario::load(path)?;
    let (model, _) = scenario.checked_model()?;
    let grid = scenario.build_grid()?;
    let kernel = TransitionKernel::build(&model, &grid)?;
    let report = match load_solution(&scenario, &grid) {
        Ok(r) => r,
        Err(Error::Io { .. }) => {
            eprintln!("note: no saved solution in {}; solving first", scenario.output.display());
            solve(&model, &grid, &kernel, &scenario.solver.options())?
        }
        Err(e) => return Err(e),
    };
    let mut out = audit(&model, &grid, &kernel, &report, &AuditOptions { pairs, seed: scenario.simulate.seed })?;
    let middle = vec![grid.upper() / 2.0; grid.dim()];
    let strategy = Strategy::from_policy(grid.clone(), report.policy.clone())?;
    let sim = &scenario.simulate;
    let p = simulate_path(&model, &strategy, &middle, sim.horizon, sim.dt, sim.seed)?;
    out.checks.push(audit_path(&p));
    create_dir(&scenario.output)?;
    write_text(&scenario.output.join(AUDIT_JSON), &(out.to_json() + "\n"))?;
    let text = out.to_string();
    write_text(&scenario.output.join(AUDIT_TEXT), &text)?;
    print!("{text}");
    Ok(if out.passed() { Outcome::Ok } else { Outcome::Failed })
}

/// Sup-norm distance between two solutions over the states of `base`, a
/// lattice both of them refine.
pub fn sup_difference(base: &Grid, a: (&Grid, &[f64]), b: (&Grid, &[f64])) -> Result<f64> {
    for g in [a.0, b.0] {
        if !g.refines(base) {
            return Err(Error::InvalidArgument(format!("spacing {} does not refine spacing {}", g.h(), base.h())));
        }
    }
    let mut sup = 0.0f64;
    for s in 0..base.len() {
        let i = a.0.embed(base, s).expect("refining lattice contains the base one");
        let j = b.0.embed(base, s).expect("refining lattice contains the base one");
        sup = sup.max((a.1[i] - b.1[j]).abs());
    }
    Ok(sup)
}

pub fn run_sweep(path: &FsPath, spacings: &[f64]) -> Result<Outcome> {
    let scenario = Scenario::load(path)?;
    let (model, _) = scenario.checked_model()?;
    let mut hs = spacings.to_vec();
    if hs.is_empty() {
        return Err(Error::InvalidArgument("need at least one spacing".into()));
    }
    hs.sort_by(|a, b| b.total_cmp(a));
    hs.dedup();
    let dim = scenario.preset().dim();
    let grids =
        hs.iter().map(|&h| crate::kernel::build_grid(h, scenario.grid.upper, dim)).collect::<Result<Vec<_>>>()?;
    let coarsest = &grids[0];
    if let Some(g) = grids.iter().find(|g| !g.refines(coarsest)) {
        return Err(Error::InvalidArgument(format!("spacing {} does not refine spacing {}", g.h(), coarsest.h())));
    }
    let mut solutions = Vec::with_capacity(grids.len());
    for grid in &grids {
        let kernel = TransitionKernel::build(&model, grid)?;
        let report = solve(&model, grid, &kernel, &scenario.solver.options())?;
        println!(
            "h={}: {} states, {} iterations{}",
            grid.h(),
            grid.len(),
            report.iterations,
            if report.converged { "" } else { ", NOT converged" }
        );
        solutions.push(report);
    }
    create_dir(&scenario.output)?;
    let mut w = csv_writer(&scenario.output.join(SWEEP_FILE))?;
    w.write_record(["h", "states", "iterations", "converged", "sup_diff_previous", "sup_diff_common"])?;
    for (k, (grid, r)) in grids.iter().zip(&solutions).enumerate() {
        let (pair, common) = if k == 0 {
            (String::new(), String::new())
        } else {
            let prev = (&grids[k - 1], solutions[k - 1].values.as_slice());
            let this = (grid, r.values.as_slice());
            let pair = sup_difference(&grids[k - 1], prev, this)?;
            let common = sup_difference(coarsest, prev, this)?;
            (pair.to_string(), common.to_string())
        };
        w.write_record([
            grid.h().to_string(),
            grid.len().to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            pair,
            common,
        ])?;
    }
    w.flush().map_err(|e| Error::io(scenario.output.join(SWEEP_FILE), e))?;

    let mut v = csv_writer(&scenario.output.join(SWEEP_VALUES_FILE))?;
    let mut header = coord_header("x", dim);
    header.extend(hs.iter().map(|h| format!("value_h{h}")));
    v.write_record(&header)?;
    for s in 0..coarsest.len() {
        let mut row: Vec<String> = coarsest.coords(s).iter().map(f64::to_string).collect();
        for (grid, r) in grids.iter().zip(&solutions) {
            let t = grid.embed(coarsest, s).expect("refines coarsest");
            row.push(r.values[t].to_string());
        }
        v.write_record(&row)?;
    }
    v.flush().map_err(|e| Error::io(scenario.output.join(SWEEP_VALUES_FILE), e))?;
    Ok(if solutions.iter().all(|r| r.converged) { Outcome::Ok } else { Outcome::Failed })
}
