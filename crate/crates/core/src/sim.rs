//! Receding-horizon closed loops: a plant generator, piecewise-constant
//! references, one MPC solve per step with shifted warm starts, and a
//! per-step log.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arx::{ArxHistory, ArxModel, LpvArxSpec, TimeVaryingArxSpec};
use crate::error::{Error, Result};
use crate::problem::{DualPoint, MpcProblem, MpcSettings, PrimalPoint};
use crate::qp::{build_sparse_qp, reference_solve_with, AdmmSettings};
use crate::solver::{solve, SolverConfig};

/// Where the plant (and prediction) model comes from at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantSpec {
    TimeVarying(TimeVaryingArxSpec),
    /// The 2x2 sinusoidally perturbed benchmark model.
    TimeVaryingBenchmark,
    Lpv(LpvArxSpec),
    /// ReLU-network LPV model generated from a seed around the benchmark
    /// base model padded to orders `(n_a, n_b)`.
    LpvRandom {
        seed: u64,
        #[serde(default = "default_order")]
        n_a: usize,
        #[serde(default = "default_order")]
        n_b: usize,
        #[serde(default = "default_hidden_factor")]
        hidden_factor: usize,
        #[serde(default)]
        weight_lo: f64,
        #[serde(default = "default_weight_hi")]
        weight_hi: f64,
    },
    Fixed(ArxModel),
}

fn default_order() -> usize {
    6
}

fn default_hidden_factor() -> usize {
    3
}

fn default_weight_hi() -> f64 {
    0.1
}

fn default_ref_range() -> [f64; 2] {
    [-0.8, 0.8]
}

/// Instantiated plant generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Plant {
    TimeVarying(TimeVaryingArxSpec),
    Lpv(LpvArxSpec),
    Fixed(ArxModel),
}

impl PlantSpec {
    pub fn instantiate(&self) -> Result<Plant> {
        Ok(match self {
            PlantSpec::TimeVarying(s) => Plant::TimeVarying(TimeVaryingArxSpec::new(
                s.base.clone(),
                s.perturbation_gain,
                s.period_divisor,
            )?),
            PlantSpec::TimeVaryingBenchmark => Plant::TimeVarying(TimeVaryingArxSpec::benchmark()),
            PlantSpec::Lpv(s) => {
                s.validate()?;
                Plant::Lpv(s.clone())
            }
            PlantSpec::LpvRandom {
                seed,
                n_a,
                n_b,
                hidden_factor,
                weight_lo,
                weight_hi,
            } => {
                let base = ArxModel::time_varying_base().extend_repeating_last(*n_a, *n_b)?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Plant::Lpv(LpvArxSpec::random_around(
                    &base,
                    *hidden_factor,
                    *weight_lo,
                    *weight_hi,
                    &mut rng,
                )?)
            }
            PlantSpec::Fixed(m) => Plant::Fixed(m.clone()),
        })
    }
}

impl Plant {
    pub fn n_y(&self) -> usize {
        match self {
            Plant::TimeVarying(s) => s.base.n_y(),
            Plant::Lpv(s) => s.n_y,
            Plant::Fixed(m) => m.n_y(),
        }
    }

    pub fn n_u(&self) -> usize {
        match self {
            Plant::TimeVarying(s) => s.base.n_u(),
            Plant::Lpv(s) => s.n_u,
            Plant::Fixed(m) => m.n_u(),
        }
    }

    pub fn orders(&self) -> (usize, usize) {
        match self {
            Plant::TimeVarying(s) => (s.base.n_a(), s.base.n_b()),
            Plant::Lpv(s) => (s.n_a, s.n_b),
            Plant::Fixed(m) => (m.n_a(), m.n_b()),
        }
    }

    /// Model that produces `y_(k+1)` from the history at step `k`.
    pub fn model_at(&self, k: usize, history: &ArxHistory) -> Result<ArxModel> {
        match self {
            Plant::TimeVarying(s) => s.at(k as u64),
            Plant::Lpv(s) => s.at(&s.scheduling_vector(history)?),
            Plant::Fixed(m) => Ok(m.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub plant: PlantSpec,
    pub mpc: MpcSettings,
    pub steps: usize,
    pub ref_hold: usize,
    #[serde(default = "default_ref_range")]
    pub ref_range: [f64; 2],
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Show the controller the upcoming references over the horizon instead
    /// of holding the current one.
    #[serde(default)]
    pub ref_preview: bool,
}

impl Scenario {
    /// The benchmark protocol: 200 steps, references redrawn every 20 steps.
    pub fn benchmark(plant: PlantSpec, horizon: usize, seed: u64) -> Self {
        Self {
            plant,
            mpc: MpcSettings::benchmark(horizon, 2, 2),
            steps: 200,
            ref_hold: 20,
            ref_range: default_ref_range(),
            seed,
            solver: SolverConfig::default(),
            ref_preview: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if self.ref_hold == 0 {
            return Err(Error::InvalidConfig("ref_hold must be at least 1".into()));
        }
        self.mpc.validate()?;
        self.solver.validate()?;
        Ok(())
    }
}

/// Piecewise-constant references with a fresh uniform draw in
/// `[range[0], range[1]]` every `ref_hold` steps.
pub fn generate_references(
    n_y: usize,
    steps: usize,
    ref_hold: usize,
    seed: u64,
    range: [f64; 2],
) -> Result<Vec<DVector<f64>>> {
    let [lo, hi] = range;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::EmptyRange { lo, hi });
    }
    if ref_hold == 0 {
        return Err(Error::InvalidConfig("ref_hold must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(steps);
    let mut current = DVector::zeros(n_y);
    for k in 0..steps {
        if k % ref_hold == 0 {
            current = DVector::from_fn(n_y, |_, _| if lo == hi { lo } else { rng.gen_range(lo..=hi) });
        }
        out.push(current.clone());
    }
    Ok(out)
}

fn shift_list(list: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<_> = list.iter().skip(1).cloned().collect();
    if let Some(last) = list.last() {
        out.push(last.clone());
    }
    out
}

/// Drops the first block of every trajectory and duplicates the last one.
pub fn warm_start_shift(z: &PrimalPoint, d: &DualPoint) -> (PrimalPoint, DualPoint) {
    (
        PrimalPoint {
            y: shift_list(&z.y),
            u: shift_list(&z.u),
            du: shift_list(&z.du),
        },
        DualPoint {
            lambda: shift_list(&d.lambda),
            gamma: shift_list(&d.gamma),
        },
    )
}

/// Which solver drives the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Cdal,
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub controller: Controller,
    /// Also solve every step's problem with this solver, from its own warm
    /// start, without applying its input.
    pub shadow: Option<Controller>,
    pub oracle_tol: f64,
    pub warm_start: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            controller: Controller::Cdal,
            shadow: None,
            oracle_tol: 1e-9,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    /// Realized `y_(t+1)`.
    pub y: Vec<f64>,
    /// Applied `u_t`.
    pub u: Vec<f64>,
    /// Realized `u_t - u_(t-1)`.
    pub du: Vec<f64>,
    /// `r_(t+1)`
    pub r: Vec<f64>,
    /// Controller's prediction of `y_(t+1)`.
    pub predicted_y: Vec<f64>,
    pub outer_iters: usize,
    pub inner_passes: usize,
    pub converged: bool,
    /// Steady-state input of `r_(t+1)` under the step's model lies in the
    /// input box.
    pub reachable: bool,
    pub solve_ms: f64,
    /// Explicit QP construction time; zero for the coordinate-descent path.
    pub construct_ms: f64,
    /// Input the shadow solver would apply.
    pub shadow_u: Option<Vec<f64>>,
    pub shadow_construct_ms: Option<f64>,
    pub shadow_solve_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoopLog {
    pub n_y: usize,
    pub n_u: usize,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingStats {
    pub avg_ms: f64,
    pub max_ms: f64,
    /// Mean construction time, for logs where construction happened.
    pub construction_avg_ms: Option<f64>,
}

pub fn timing_stats(log: &ClosedLoopLog) -> Result<TimingStats> {
    if log.records.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n = log.records.len() as f64;
    let avg = log.records.iter().map(|r| r.solve_ms).sum::<f64>() / n;
    let max = log.records.iter().map(|r| r.solve_ms).fold(f64::NEG_INFINITY, f64::max);
    let built = log.records.iter().any(|r| r.construct_ms > 0.0);
    Ok(TimingStats {
        avg_ms: avg,
        max_ms: max,
        construction_avg_ms: built.then(|| log.records.iter().map(|r| r.construct_ms).sum::<f64>() / n),
    })
}

/// Number of logged entries outside their box by more than `tol`.
pub fn count_violations(log: &ClosedLoopLog, s: &MpcSettings, tol: f64) -> usize {
    let outside = |v: &[f64], lo: &DVector<f64>, hi: &DVector<f64>| {
        v.iter()
            .enumerate()
            .filter(|(i, x)| **x < lo[*i] - tol || **x > hi[*i] + tol)
            .count()
    };
    log.records
        .iter()
        .map(|r| outside(&r.y, &s.y_min, &s.y_max) + outside(&r.u, &s.u_min, &s.u_max) + outside(&r.du, &s.du_min, &s.du_max))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingReport {
    /// Segment ends whose setpoint was reachable.
    pub checked: usize,
    pub passed: usize,
    /// Largest `|y - r|_inf` over the checked segment ends.
    pub max_error: f64,
}

/// Tracking error at the last step of every hold segment.
pub fn tracking_report(log: &ClosedLoopLog, ref_hold: usize, tol: f64) -> TrackingReport {
    let mut rep = TrackingReport {
        checked: 0,
        passed: 0,
        max_error: 0.0,
    };
    for rec in &log.records {
        if (rec.t + 1) % ref_hold != 0 || !rec.reachable {
            continue;
        }
        let err = rec.y.iter().zip(&rec.r).map(|(y, r)| (y - r).abs()).fold(0.0, f64::max);
        rep.checked += 1;
        rep.max_error = rep.max_error.max(err);
        if err < tol {
            rep.passed += 1;
        }
    }
    rep
}

/// Steady-state input `(sum B)^-1 (I - sum A) r`, when `sum B` is square and invertible.
pub fn steady_state_input(model: &ArxModel, r: &DVector<f64>) -> Option<DVector<f64>> {
    let n_y = model.n_y();
    if n_y != model.n_u() {
        return None;
    }
    let mut sa = DMatrix::identity(n_y, n_y);
    for a in model.a() {
        sa -= a;
    }
    let sb = model.b().iter().fold(DMatrix::zeros(n_y, n_y), |acc, b| acc + b);
    sb.lu().solve(&(sa * r))
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl ClosedLoopLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn nonconverged(&self) -> usize {
        self.records.iter().filter(|r| !r.converged).count()
    }

    /// Largest `|u - u_shadow|_inf` over shadowed steps.
    pub fn max_shadow_deviation(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| {
                r.shadow_u
                    .as_ref()
                    .map(|o| r.u.iter().zip(o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            })
            .reduce(f64::max)
    }

    /// Columns `t, y_1.., u_1.., du_1.., r_1.., iters, time_ms`, floats with 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::InvalidConfig(format!("csv output failed: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for (p, n) in [("y", self.n_y), ("u", self.n_u), ("du", self.n_u), ("r", self.n_y)] {
            header.extend((1..=n).map(|i| format!("{p}_{i}")));
        }
        header.push("iters".into());
        header.push("time_ms".into());
        w.write_record(&header).map_err(io)?;
        for rec in &self.records {
            let mut row = vec![rec.t.to_string()];
            for v in rec.y.iter().chain(&rec.u).chain(&rec.du).chain(&rec.r) {
                row.push(fmt17(*v));
            }
            row.push(rec.outer_iters.to_string());
            row.push(fmt17(rec.solve_ms));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidConfig(format!("csv output failed: {e}")))?;
        Ok(())
    }

    /// The log with every timing field zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        let mut log = self.clone();
        for r in &mut log.records {
            r.solve_ms = 0.0;
            r.construct_ms = 0.0;
            r.shadow_construct_ms = r.shadow_construct_ms.map(|_| 0.0);
            r.shadow_solve_ms = r.shadow_solve_ms.map(|_| 0.0);
        }
        log
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Warm start carried between oracle solves: primal flat vector and ADMM
/// multipliers in the solver's row order.
struct OracleWarm {
    x: DVector<f64>,
    y: DVector<f64>,
}

/// Shifts an interleaved vector made of `horizon` blocks of `block` entries.
fn shift_flat(v: &[f64], block: usize) -> Vec<f64> {
    let mut out = v[block.min(v.len())..].to_vec();
    if v.len() >= block {
        out.extend_from_slice(&v[v.len() - block..]);
    }
    out
}

fn shift_oracle_warm(w: &OracleWarm, horizon: usize, n_y: usize, n_u: usize) -> OracleWarm {
    let block = n_y + 2 * n_u;
    let m_arx = horizon * n_y;
    let m_du = horizon * n_u;
    let y = w.y.as_slice();
    let mut ys = shift_flat(&y[..m_arx], n_y);
    ys.extend(shift_flat(&y[m_arx..m_arx + m_du], n_u));
    ys.extend(shift_flat(&y[m_arx + m_du..], block));
    OracleWarm {
        x: DVector::from_vec(shift_flat(w.x.as_slice(), block)),
        y: DVector::from_vec(ys),
    }
}

struct OracleStep {
    z: PrimalPoint,
    warm: OracleWarm,
    construct_ms: f64,
    solve_ms: f64,
}

fn oracle_step(p: &MpcProblem, tol: f64, warm: Option<&OracleWarm>) -> Result<OracleStep> {
    let t0 = Instant::now();
    let qp = build_sparse_qp(p)?;
    let construct_ms = ms(t0);
    let t1 = Instant::now();
    let sol = reference_solve_with(&qp, tol, &AdmmSettings::default(), warm.map(|w| (&w.x, &w.y)))?;
    let solve_ms = ms(t1);
    let z = PrimalPoint::from_flat(p.horizon(), p.n_y(), p.n_u(), sol.z.as_slice())?;
    Ok(OracleStep {
        z,
        warm: OracleWarm { x: sol.z, y: sol.y },
        construct_ms,
        solve_ms,
    })
}

#[derive(Default)]
struct Warm {
    cdal: Option<(PrimalPoint, DualPoint)>,
    oracle: Option<OracleWarm>,
}

struct StepSolve {
    z: PrimalPoint,
    outer_iters: usize,
    inner_passes: usize,
    converged: bool,
    solve_ms: f64,
    construct_ms: f64,
}

fn run_controller(
    c: Controller,
    p: &MpcProblem,
    cfg: &SolverConfig,
    opts: &SimOptions,
    warm: &mut Warm,
) -> Result<StepSolve> {
    let (horizon, n_y, n_u) = (p.horizon(), p.n_y(), p.n_u());
    match c {
        Controller::Cdal => {
            let t0 = Instant::now();
            let report = solve(p, warm.cdal.as_ref().map(|(z, d)| (z, d)), cfg)?;
            let solve_ms = ms(t0);
            if !report.converged() {
                log::warn!("solver stopped at N_out with residual {:.3e}", report.outer_residual);
            }
            warm.cdal = opts.warm_start.then(|| warm_start_shift(&report.solution, &report.duals));
            Ok(StepSolve {
                converged: report.converged(),
                outer_iters: report.outer_iters,
                inner_passes: report.total_inner_passes,
                z: report.solution,
                solve_ms,
                construct_ms: 0.0,
            })
        }
        Controller::Oracle => {
            let o = oracle_step(p, opts.oracle_tol, warm.oracle.as_ref())?;
            warm.oracle = opts.warm_start.then(|| shift_oracle_warm(&o.warm, horizon, n_y, n_u));
            Ok(StepSolve {
                z: o.z,
                outer_iters: 0,
                inner_passes: 0,
                converged: true,
                solve_ms: o.solve_ms,
                construct_ms: o.construct_ms,
            })
        }
    }
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.min(hi).max(lo)
}

pub fn run_closed_loop(s: &Scenario) -> Result<ClosedLoopLog> {
    run_closed_loop_with(s, &SimOptions::default())
}

/// Runs the scenario. A step whose solve does not converge applies the last
/// iterate and is flagged in its record.
pub fn run_closed_loop_with(s: &Scenario, opts: &SimOptions) -> Result<ClosedLoopLog> {
    s.validate()?;
    let plant = s.plant.instantiate()?;
    let (n_y, n_u) = (plant.n_y(), plant.n_u());
    if s.mpc.n_y() != n_y || s.mpc.n_u() != n_u {
        return Err(crate::error::mismatch(
            "mpc settings dimensions",
            format!("({n_y}, {n_u})"),
            format!("({}, {})", s.mpc.n_y(), s.mpc.n_u()),
        ));
    }
    let horizon = s.mpc.horizon;
    let refs = generate_references(n_y, s.steps, s.ref_hold, s.seed, s.ref_range)?;
    let (n_a, n_b) = plant.orders();
    let mut history = ArxHistory::zeros(n_y, n_u, n_a, n_b);

    let mut warm = Warm::default();
    let mut shadow_warm = Warm::default();
    let mut records = Vec::with_capacity(s.steps);
    let set = &s.mpc;

    for k in 0..s.steps {
        let model = plant.model_at(k, &history)?;
        let preview: Vec<DVector<f64>> = (0..horizon)
            .map(|i| {
                let j = if s.ref_preview { (k + i).min(s.steps - 1) } else { k };
                refs[j].clone()
            })
            .collect();
        let problem = MpcProblem::new(set.clone(), model.clone(), history.clone(), preview)?;

        let primary = run_controller(opts.controller, &problem, &s.solver, opts, &mut warm)?;
        let shadow = match opts.shadow {
            Some(c) => Some(run_controller(c, &problem, &s.solver, opts, &mut shadow_warm)?),
            None => None,
        };
        let z = &primary.z;

        // keep the applied input inside both the input box and the rate box
        // around u_(k-1), which the equality residual may miss by a tolerance
        let u_prev = history.past_u[0].clone();
        let u = DVector::from_fn(n_u, |i, _| {
            let lo = set.u_min[i].max(u_prev[i] + set.du_min[i]);
            let hi = set.u_max[i].min(u_prev[i] + set.du_max[i]);
            clamp(z.u[0][i], lo, hi)
        });
        let du = &u - &u_prev;
        let mut inputs = vec![u.clone()];
        inputs.extend(history.past_u[..n_b - 1].iter().cloned());
        let y = model.step(&history.past_y, &inputs)?;
        let r = &refs[k];
        let reachable = steady_state_input(&model, r)
            .map_or(false, |u_ss| (0..n_u).all(|i| u_ss[i] >= set.u_min[i] && u_ss[i] <= set.u_max[i]));

        records.push(StepRecord {
            t: k,
            y: y.as_slice().to_vec(),
            u: u.as_slice().to_vec(),
            du: du.as_slice().to_vec(),
            r: r.as_slice().to_vec(),
            predicted_y: z.y[0].as_slice().to_vec(),
            outer_iters: primary.outer_iters,
            inner_passes: primary.inner_passes,
            converged: primary.converged,
            reachable,
            solve_ms: primary.solve_ms,
            construct_ms: primary.construct_ms,
            shadow_u: shadow.as_ref().map(|o| o.z.u[0].as_slice().to_vec()),
            shadow_construct_ms: shadow.as_ref().map(|o| o.construct_ms),
            shadow_solve_ms: shadow.as_ref().map(|o| o.solve_ms),
        });
        history.advance(y, u);
    }
    Ok(ClosedLoopLog { n_y, n_u, records })
}
