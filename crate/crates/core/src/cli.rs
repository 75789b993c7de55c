//! `cdal-arx` command-line front end.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::problem::MpcProblem;
use crate::sim::{
    count_violations, run_closed_loop_with, timing_stats, tracking_report, ClosedLoopLog, Controller, Scenario,
    SimOptions, TimingStats, TrackingReport,
};
use crate::solver::{solve, SolveReport, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;

/// Tolerance for counting logged bound violations.
pub const VIOLATION_TOL: f64 = 1e-9;
/// Tracking error allowed at the end of a reference segment.
pub const TRACKING_TOL: f64 = 0.05;

const EXIT_HELP: &str = "Exit codes:
  0  success (for `solve`: converged)
  1  input, validation or I/O error
  2  `solve` stopped at N_out without meeting eps_out

Set CDAL_LOG (error, warn, info, debug, trace) for log output on stderr.";

#[derive(Debug, Parser)]
#[command(name = "cdal-arx", version, about = "Construction-free MPC for ARX models", after_help = EXIT_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Disable the accelerated dual extrapolation.
    #[arg(long)]
    pub no_accel: bool,
    /// Use the pass that recomputes offsets for every block.
    #[arg(long)]
    pub naive_pass: bool,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ScenarioArgs {
    /// Scenario JSON file.
    pub scenario: PathBuf,
    /// Override the reference seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the prediction horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Override the number of closed-loop steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one MPC problem; writes solution.json.
    Solve {
        /// Problem JSON file (settings, model, history, refs).
        problem: PathBuf,
        /// Solver configuration JSON; library defaults when omitted.
        #[arg(long)]
        solver: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a closed-loop scenario; writes trajectories.csv and summary.json.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Drive the loop with the reference QP solver instead.
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario and solve every step with a second solver as well;
    /// writes comparison.json.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Shadow with a second coordinate-descent solve instead of the
        /// reference QP solver.
        #[arg(long)]
        self_compare: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Repeat a scenario and report per-step timing; writes bench.json.
    Bench {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Horizons to sweep, e.g. `10,20,30`; the scenario's own when omitted.
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        /// Also time the reference QP solver (construction and solution).
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses a JSON file, reporting the failing field path and position.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        anyhow::anyhow!(
            "{}: line {} column {}: field `{}`: {}",
            path.display(),
            inner.line(),
            inner.column(),
            field,
            inner
        )
    })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn apply_flags(cfg: &mut SolverConfig, c: &Common) {
    if c.no_accel {
        cfg.use_acceleration = false;
    }
    if c.naive_pass {
        cfg.use_coupled = false;
    }
}

fn load_scenario(a: &ScenarioArgs, c: &Common) -> anyhow::Result<Scenario> {
    let mut s: Scenario = load_json(&a.scenario)?;
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(h) = a.horizon {
        s.mpc.horizon = h;
    }
    if let Some(n) = a.steps {
        s.steps = n;
    }
    apply_flags(&mut s.solver, c);
    s.validate()
        .with_context(|| format!("invalid scenario {}", a.scenario.display()))?;
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOutput {
    pub solve_ms: f64,
    #[serde(flatten)]
    pub report: SolveReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub steps: usize,
    pub horizon: usize,
    pub controller: Controller,
    pub timing: TimingStats,
    pub violations: usize,
    pub nonconverged: usize,
    pub mean_outer_iters: f64,
    pub max_outer_iters: usize,
    pub tracking: TrackingReport,
}

pub fn summarize(s: &Scenario, controller: Controller, log: &ClosedLoopLog) -> anyhow::Result<Summary> {
    let iters: Vec<usize> = log.records.iter().map(|r| r.outer_iters).collect();
    Ok(Summary {
        steps: log.len(),
        horizon: s.mpc.horizon,
        controller,
        timing: timing_stats(log)?,
        violations: count_violations(log, &s.mpc, VIOLATION_TOL),
        nonconverged: log.nonconverged(),
        mean_outer_iters: iters.iter().sum::<usize>() as f64 / iters.len().max(1) as f64,
        max_outer_iters: iters.iter().copied().max().unwrap_or(0),
        tracking: tracking_report(log, s.ref_hold, TRACKING_TOL),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub steps: usize,
    pub horizon: usize,
    pub shadow: Controller,
    pub max_input_deviation: f64,
    pub cdal_solve: TimingStats,
    pub shadow_construct_avg_ms: f64,
    pub shadow_solve_avg_ms: f64,
    pub shadow_solve_max_ms: f64,
    pub nonconverged: usize,
}

pub fn compare_log(s: &Scenario, shadow: Controller, log: &ClosedLoopLog) -> anyhow::Result<Comparison> {
    let n = log.len().max(1) as f64;
    let construct: Vec<f64> = log.records.iter().filter_map(|r| r.shadow_construct_ms).collect();
    let solve: Vec<f64> = log.records.iter().filter_map(|r| r.shadow_solve_ms).collect();
    Ok(Comparison {
        steps: log.len(),
        horizon: s.mpc.horizon,
        shadow,
        max_input_deviation: log.max_shadow_deviation().unwrap_or(0.0),
        cdal_solve: timing_stats(log)?,
        shadow_construct_avg_ms: construct.iter().sum::<f64>() / n,
        shadow_solve_avg_ms: solve.iter().sum::<f64>() / n,
        shadow_solve_max_ms: solve.iter().copied().fold(0.0, f64::max),
        nonconverged: log.nonconverged(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub cpu_model: Option<String>,
    pub version: String,
}

impl MachineInfo {
    pub fn current() -> Self {
        let cpu_model = fs::read_to_string("/proc/cpuinfo").ok().and_then(|t| {
            t.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        });
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleStats {
    pub median: f64,
    pub mean: f64,
    pub variance: f64,
    pub samples: Vec<f64>,
}

impl SampleStats {
    pub fn of(samples: Vec<f64>) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let median = match sorted.len() {
            0 => f64::NAN,
            k if k % 2 == 1 => sorted[k / 2],
            k => 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]),
        };
        Self {
            median,
            mean,
            variance,
            samples,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub horizon: usize,
    pub avg_ms: SampleStats,
    pub max_ms: SampleStats,
    pub nonconverged: usize,
    pub oracle_construct_avg_ms: Option<SampleStats>,
    pub oracle_solve_avg_ms: Option<SampleStats>,
    pub oracle_solve_max_ms: Option<SampleStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub steps: usize,
    pub machine: MachineInfo,
    pub rows: Vec<BenchRow>,
}

pub fn bench(s: &Scenario, horizons: &[usize], repeats: usize, oracle: bool) -> anyhow::Result<BenchReport> {
    if repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let horizons = if horizons.is_empty() {
        vec![s.mpc.horizon]
    } else {
        horizons.to_vec()
    };
    let mut rows = Vec::new();
    for &h in &horizons {
        let mut sc = s.clone();
        sc.mpc.horizon = h;
        sc.validate()?;
        let opts = SimOptions {
            shadow: oracle.then_some(Controller::Oracle),
            ..SimOptions::default()
        };
        let (mut avg, mut max, mut oc, mut os, mut om) = (vec![], vec![], vec![], vec![], vec![]);
        let mut nonconverged = 0;
        for _ in 0..repeats {
            let log = run_closed_loop_with(&sc, &opts)?;
            let t = timing_stats(&log)?;
            avg.push(t.avg_ms);
            max.push(t.max_ms);
            nonconverged = nonconverged.max(log.nonconverged());
            if oracle {
                let c = compare_log(&sc, Controller::Oracle, &log)?;
                oc.push(c.shadow_construct_avg_ms);
                os.push(c.shadow_solve_avg_ms);
                om.push(c.shadow_solve_max_ms);
            }
        }
        rows.push(BenchRow {
            horizon: h,
            avg_ms: SampleStats::of(avg),
            max_ms: SampleStats::of(max),
            nonconverged,
            oracle_construct_avg_ms: oracle.then(|| SampleStats::of(oc)),
            oracle_solve_avg_ms: oracle.then(|| SampleStats::of(os)),
            oracle_solve_max_ms: oracle.then(|| SampleStats::of(om)),
        });
    }
    Ok(BenchReport {
        repeats,
        steps: s.steps,
        machine: MachineInfo::current(),
        rows,
    })
}

fn cmd_solve(problem: &Path, solver: Option<&Path>, c: &Common) -> anyhow::Result<i32> {
    let p: MpcProblem = load_json(problem)?;
    let mut cfg: SolverConfig = match solver {
        Some(path) => load_json(path)?,
        None => SolverConfig::default(),
    };
    apply_flags(&mut cfg, c);
    cfg.validate().context("invalid solver configuration")?;
    prepare_out(&c.out)?;
    let t0 = std::time::Instant::now();
    let report = solve(&p, None, &cfg)?;
    let solve_ms = t0.elapsed().as_secs_f64() * 1e3;
    let code = if report.converged() { EXIT_OK } else { EXIT_MAX_ITER };
    let out = SolveOutput { solve_ms, report };
    let path = write_json(&c.out, "solution.json", &out)?;
    eprintln!(
        "{}: {:?} after {} outer iterations, residual {:.3e}",
        path.display(),
        out.report.status,
        out.report.outer_iters,
        out.report.outer_residual
    );
    Ok(code)
}

fn cmd_simulate(a: &ScenarioArgs, oracle: bool, c: &Common) -> anyhow::Result<i32> {
    let s = load_scenario(a, c)?;
    prepare_out(&c.out)?;
    let controller = if oracle { Controller::Oracle } else { Controller::Cdal };
    let log = run_closed_loop_with(
        &s,
        &SimOptions {
            controller,
            ..SimOptions::default()
        },
    )?;
    let csv_path = c.out.join("trajectories.csv");
    let f = File::create(&csv_path).with_context(|| format!("cannot create {}", csv_path.display()))?;
    log.write_csv(BufWriter::new(f))?;
    let summary = summarize(&s, controller, &log)?;
    write_json(&c.out, "summary.json", &summary)?;
    eprintln!(
        "{} steps, avg {:.3} ms, max {:.3} ms, {} violations, {} non-converged",
        summary.steps, summary.timing.avg_ms, summary.timing.max_ms, summary.violations, summary.nonconverged
    );
    Ok(EXIT_OK)
}

fn cmd_compare(a: &ScenarioArgs, self_compare: bool, c: &Common) -> anyhow::Result<i32> {
    let s = load_scenario(a, c)?;
    prepare_out(&c.out)?;
    let shadow = if self_compare { Controller::Cdal } else { Controller::Oracle };
    let log = run_closed_loop_with(
        &s,
        &SimOptions {
            shadow: Some(shadow),
            ..SimOptions::default()
        },
    )?;
    let cmp = compare_log(&s, shadow, &log)?;
    write_json(&c.out, "comparison.json", &cmp)?;
    eprintln!("max input deviation {:.3e}", cmp.max_input_deviation);
    Ok(EXIT_OK)
}

fn cmd_bench(a: &ScenarioArgs, repeats: usize, horizons: &[usize], oracle: bool, c: &Common) -> anyhow::Result<i32> {
    let s = load_scenario(a, c)?;
    prepare_out(&c.out)?;
    let report = bench(&s, horizons, repeats, oracle)?;
    write_json(&c.out, "bench.json", &report)?;
    for r in &report.rows {
        eprintln!("T={}: avg {:.3} ms, max {:.3} ms", r.horizon, r.avg_ms.median, r.max_ms.median);
    }
    Ok(EXIT_OK)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Solve { problem, solver, common } => cmd_solve(problem, solver.as_deref(), common),
        Command::Simulate {
            scenario,
            oracle,
            common,
        } => cmd_simulate(scenario, *oracle, common),
        Command::Compare {
            scenario,
            self_compare,
            common,
        } => cmd_compare(scenario, *self_compare, common),
        Command::Bench {
            scenario,
            repeats,
            horizons,
            oracle,
            common,
        } => cmd_bench(scenario, *repeats, horizons, *oracle, common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}
