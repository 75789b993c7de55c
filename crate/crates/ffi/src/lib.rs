//! C ABI over `cdal-arx`.
//!
//! Three opaque handles: `CdalModel` (ARX coefficients), `CdalProblem`
//! (model, weights, bounds, history and references) and `CdalSolver`
//! (configuration plus the warm start carried between receding-horizon
//! steps). Every function returns a `CdalStatus`; on failure the message is
//! available from `cdal_last_error_message` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cdal_arx::sim::warm_start_shift;
use cdal_arx::{solve, ArxHistory, ArxModel, DualPoint, Error, MpcProblem, MpcSettings, PrimalPoint, SolveReport, SolverConfig};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// The solve stopped at `n_out`; outputs hold the last iterate.
    NotConverged = 4,
    Parse = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdalSolverConfig {
    pub rho: f64,
    pub n_out: usize,
    pub n_in: usize,
    pub eps_out: f64,
    pub eps_in: f64,
    pub use_coupled: bool,
    pub use_acceleration: bool,
    pub accelerate_gamma: bool,
    /// Start each solve from the shifted previous solution.
    pub warm_start: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CdalSolveInfo {
    pub outer_iters: usize,
    pub inner_passes: usize,
    pub outer_residual: f64,
    pub converged: bool,
}

pub struct CdalModel {
    model: ArxModel,
}

pub struct CdalProblem {
    problem: MpcProblem,
}

pub struct CdalSolver {
    cfg: SolverConfig,
    warm_start: bool,
    warm: Option<(PrimalPoint, DualPoint)>,
    last: Option<SolveReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(CdalStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::DimensionMismatch { .. } | Error::LengthMismatch { .. } => CdalStatus::DimensionMismatch,
            _ => CdalStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CdalStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<CdalStatus, Fail>) -> CdalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            if status == CdalStatus::Ok {
                set_error("");
            }
            status
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CdalStatus::Panic
        }
    }
}

unsafe fn slice<'a>(what: &str, p: *const f64, len: usize) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(what: &str, p: *mut f64, len: usize) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn expect_len(what: &str, expected: usize, actual: usize) -> Result<(), Fail> {
    if expected != actual {
        return Err(Fail(
            CdalStatus::DimensionMismatch,
            format!("{what}: expected {expected} values, got {actual}"),
        ));
    }
    Ok(())
}

unsafe fn vector(what: &str, p: *const f64, n: usize) -> Result<DVector<f64>, Fail> {
    Ok(DVector::from_row_slice(slice(what, p, n)?))
}

fn chunks(data: &[f64], n: usize) -> Vec<DVector<f64>> {
    data.chunks(n).map(DVector::from_row_slice).collect()
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<CdalStatus, Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(CdalStatus::Ok)
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cdal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a model from `n_a` row-major `n_y x n_y` matrices in `a` (lag 1
/// first) and `n_b` row-major `n_y x n_u` matrices in `b`.
///
/// # Safety
/// `a` must hold `n_a * n_y * n_y` doubles and `b` `n_b * n_y * n_u`.
#[no_mangle]
pub unsafe extern "C" fn cdal_model_new(
    n_y: usize,
    n_u: usize,
    n_a: usize,
    n_b: usize,
    a: *const f64,
    b: *const f64,
    out: *mut *mut CdalModel,
) -> CdalStatus {
    guard(|| {
        let a = slice("a", a, n_a * n_y * n_y)?;
        let b = slice("b", b, n_b * n_y * n_u)?;
        let am = a.chunks(n_y * n_y).map(|c| DMatrix::from_row_slice(n_y, n_y, c)).collect();
        let bm = b.chunks(n_y * n_u).map(|c| DMatrix::from_row_slice(n_y, n_u, c)).collect();
        store(out, CdalModel { model: ArxModel::new(am, bm)? })
    })
}

/// # Safety
/// `model` must come from `cdal_model_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cdal_model_free(model: *mut CdalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Creates a problem with zero history and zero references. Each vector
/// argument has `n_y` (output quantities) or `n_u` (input quantities)
/// entries.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `model` must be live.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cdal_problem_new(
    model: *const CdalModel,
    horizon: usize,
    w_y: *const f64,
    w_du: *const f64,
    y_min: *const f64,
    y_max: *const f64,
    u_min: *const f64,
    u_max: *const f64,
    du_min: *const f64,
    du_max: *const f64,
    out: *mut *mut CdalProblem,
) -> CdalStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?.model.clone();
        let (n_y, n_u) = (model.n_y(), model.n_u());
        let settings = MpcSettings {
            horizon,
            w_y: vector("w_y", w_y, n_y)?,
            w_du: vector("w_du", w_du, n_u)?,
            y_min: vector("y_min", y_min, n_y)?,
            y_max: vector("y_max", y_max, n_y)?,
            u_min: vector("u_min", u_min, n_u)?,
            u_max: vector("u_max", u_max, n_u)?,
            du_min: vector("du_min", du_min, n_u)?,
            du_max: vector("du_max", du_max, n_u)?,
        };
        let history = ArxHistory::zeros_for(&model);
        let refs = vec![DVector::zeros(n_y); horizon];
        store(out, CdalProblem { problem: MpcProblem::new(settings, model, history, refs)? })
    })
}

/// Parses a problem from its JSON form (settings, model, history, refs).
///
/// # Safety
/// `json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cdal_problem_from_json(json: *const c_char, out: *mut *mut CdalProblem) -> CdalStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(CdalStatus::Parse, format!("json is not UTF-8: {e}")))?;
        let problem: MpcProblem = serde_json::from_str(text).map_err(|e| Fail(CdalStatus::Parse, e.to_string()))?;
        store(out, CdalProblem { problem })
    })
}

/// # Safety
/// `problem` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cdal_problem_free(problem: *mut CdalProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Writes the horizon and the output/input dimensions.
///
/// # Safety
/// `problem` must be live; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn cdal_problem_dims(
    problem: *const CdalProblem,
    horizon: *mut usize,
    n_y: *mut usize,
    n_u: *mut usize,
) -> CdalStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.problem;
        for (dst, v) in [(horizon, p.horizon()), (n_y, p.n_y()), (n_u, p.n_u())] {
            if let Some(d) = dst.as_mut() {
                *d = v;
            }
        }
        Ok(CdalStatus::Ok)
    })
}

fn rebuild(
    p: &MpcProblem,
    model: Option<ArxModel>,
    history: Option<ArxHistory>,
    refs: Option<Vec<DVector<f64>>>,
) -> Result<MpcProblem, Fail> {
    let model = model.unwrap_or_else(|| p.model().clone());
    let history = history.unwrap_or_else(|| p.history().resized(model.n_a(), model.n_b()));
    let refs = refs.unwrap_or_else(|| p.refs().to_vec());
    Ok(MpcProblem::new(p.settings().clone(), model, history, refs)?)
}

/// Replaces the prediction model. The history window is truncated or
/// zero-padded when the orders change.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn cdal_problem_set_model(problem: *mut CdalProblem, model: *const CdalModel) -> CdalStatus {
    guard(|| {
        let p = problem.as_mut().ok_or_else(|| null("problem"))?;
        let m = model.as_ref().ok_or_else(|| null("model"))?.model.clone();
        p.problem = rebuild(&p.problem, Some(m), None, None)?;
        Ok(CdalStatus::Ok)
    })
}

/// Sets the history newest-first: `past_y = [y_0, y_-1, ..]` with `n_a * n_y`
/// values and `past_u = [u_-1, u_-2, ..]` with `n_b * n_u` values.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn cdal_problem_set_history(
    problem: *mut CdalProblem,
    past_y: *const f64,
    past_y_len: usize,
    past_u: *const f64,
    past_u_len: usize,
) -> CdalStatus {
    guard(|| {
        let p = problem.as_mut().ok_or_else(|| null("problem"))?;
        let m = p.problem.model();
        expect_len("past_y", m.n_a() * m.n_y(), past_y_len)?;
        expect_len("past_u", m.n_b() * m.n_u(), past_u_len)?;
        let history = ArxHistory {
            past_y: chunks(slice("past_y", past_y, past_y_len)?, m.n_y()),
            past_u: chunks(slice("past_u", past_u, past_u_len)?, m.n_u()),
        };
        p.problem = rebuild(&p.problem, None, Some(history), None)?;
        Ok(CdalStatus::Ok)
    })
}

/// Shifts the history after `u` was applied and `y` measured.
///
/// # Safety
/// `y` must hold `n_y` values and `u` `n_u` values.
#[no_mangle]
pub unsafe extern "C" fn cdal_problem_push_measurement(
    problem: *mut CdalProblem,
    y: *const f64,
    u: *const f64,
) -> CdalStatus {
    guard(|| {
        let p = problem.as_mut().ok_or_else(|| null("problem"))?;
        let mut history = p.problem.history().clone();
        history.advance(vector("y", y, p.problem.n_y())?, vector("u", u, p.problem.n_u())?);
        p.problem = rebuild(&p.problem, None, Some(history), None)?;
        Ok(CdalStatus::Ok)
    })
}

/// Sets the references `r_1 .. r_T` (`T * n_y` values), or one `n_y`
/// vector held over the whole horizon.
///
/// # Safety
/// `refs` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn cdal_problem_set_references(
    problem: *mut CdalProblem,
    refs: *const f64,
    len: usize,
) -> CdalStatus {
    guard(|| {
        let p = problem.as_mut().ok_or_else(|| null("problem"))?;
        let (horizon, n_y) = (p.problem.horizon(), p.problem.n_y());
        let data = slice("refs", refs, len)?;
        let refs = if len == n_y {
            vec![DVector::from_row_slice(data); horizon]
        } else {
            expect_len("refs", horizon * n_y, len)?;
            chunks(data, n_y)
        };
        p.problem = rebuild(&p.problem, None, None, Some(refs))?;
        Ok(CdalStatus::Ok)
    })
}

/// Default configuration: `rho = 1`, `n_out = 5000`, `n_in = 100`,
/// `eps_out = eps_in = 1e-6`, coupled passes, acceleration and warm starts on.
#[no_mangle]
pub extern "C" fn cdal_solver_config_default() -> CdalSolverConfig {
    let d = SolverConfig::default();
    CdalSolverConfig {
        rho: d.rho,
        n_out: d.n_out,
        n_in: d.n_in,
        eps_out: d.eps_out,
        eps_in: d.eps_in,
        use_coupled: d.use_coupled,
        use_acceleration: d.use_acceleration,
        accelerate_gamma: d.accelerate_gamma,
        warm_start: true,
    }
}

/// Creates a solver; a null `config` selects the defaults.
///
/// # Safety
/// `config` must be null or point to a valid struct.
#[no_mangle]
pub unsafe extern "C" fn cdal_solver_new(config: *const CdalSolverConfig, out: *mut *mut CdalSolver) -> CdalStatus {
    guard(|| {
        let c = config.as_ref().copied().unwrap_or_else(|| cdal_solver_config_default());
        let cfg = SolverConfig {
            rho: c.rho,
            n_out: c.n_out,
            n_in: c.n_in,
            eps_out: c.eps_out,
            eps_in: c.eps_in,
            use_coupled: c.use_coupled,
            use_acceleration: c.use_acceleration,
            accelerate_gamma: c.accelerate_gamma,
            stop_on_gamma: false,
        };
        cfg.validate()?;
        store(
            out,
            CdalSolver {
                cfg,
                warm_start: c.warm_start,
                warm: None,
                last: None,
            },
        )
    })
}

/// # Safety
/// `solver` must come from `cdal_solver_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cdal_solver_free(solver: *mut CdalSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Drops the stored warm start so the next solve starts cold.
///
/// # Safety
/// `solver` must be live.
#[no_mangle]
pub unsafe extern "C" fn cdal_solver_reset(solver: *mut CdalSolver) -> CdalStatus {
    guard(|| {
        let s = solver.as_mut().ok_or_else(|| null("solver"))?;
        s.warm = None;
        s.last = None;
        Ok(CdalStatus::Ok)
    })
}

/// Solves `problem` and writes the first input `u_0` (`n_u` values). Returns
/// `CDAL_STATUS_NOT_CONVERGED` with the last iterate written when `n_out` is
/// exhausted. `info` may be null.
///
/// # Safety
/// Handles must be live; `u0` must hold `u0_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cdal_solver_solve(
    solver: *mut CdalSolver,
    problem: *const CdalProblem,
    u0: *mut f64,
    u0_len: usize,
    info: *mut CdalSolveInfo,
) -> CdalStatus {
    guard(|| {
        let s = solver.as_mut().ok_or_else(|| null("solver"))?;
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.problem;
        expect_len("u0", p.n_u(), u0_len)?;
        let out = slice_mut("u0", u0, u0_len)?;

        let warm = s.warm.as_ref().filter(|(z, d)| p.check_primal(z).is_ok() && p.check_dual(d).is_ok());
        let report = match solve(p, warm.map(|(z, d)| (z, d)), &s.cfg) {
            Err(Error::InfeasibleWarmStart { .. }) => solve(p, None, &s.cfg)?,
            r => r?,
        };
        out.copy_from_slice(report.solution.u[0].as_slice());
        if let Some(i) = info.as_mut() {
            *i = CdalSolveInfo {
                outer_iters: report.outer_iters,
                inner_passes: report.total_inner_passes,
                outer_residual: report.outer_residual,
                converged: report.converged(),
            };
        }
        s.warm = s.warm_start.then(|| warm_start_shift(&report.solution, &report.duals));
        let status = if report.converged() {
            CdalStatus::Ok
        } else {
            CdalStatus::NotConverged
        };
        s.last = Some(report);
        Ok(status)
    })
}

/// Copies the last solution: `y` gets `y_1 .. y_T` (`T * n_y` values), `u`
/// gets `u_0 .. u_(T-1)` and `du` the increments (`T * n_u` each). Any
/// output pointer may be null with length 0 to skip it.
///
/// # Safety
/// Each non-null pointer must hold its stated length.
#[no_mangle]
pub unsafe extern "C" fn cdal_solver_solution(
    solver: *const CdalSolver,
    y: *mut f64,
    y_len: usize,
    u: *mut f64,
    u_len: usize,
    du: *mut f64,
    du_len: usize,
) -> CdalStatus {
    guard(|| {
        let s = solver.as_ref().ok_or_else(|| null("solver"))?;
        let z = &s
            .last
            .as_ref()
            .ok_or_else(|| Fail(CdalStatus::InvalidArgument, "no solve has run yet".into()))?
            .solution;
        for (what, src, dst, len) in [("y", &z.y, y, y_len), ("u", &z.u, u, u_len), ("du", &z.du, du, du_len)] {
            if dst.is_null() && len == 0 {
                continue;
            }
            let flat: Vec<f64> = src.iter().flat_map(|v| v.iter().copied()).collect();
            expect_len(what, flat.len(), len)?;
            slice_mut(what, dst, len)?.copy_from_slice(&flat);
        }
        Ok(CdalStatus::Ok)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_out_pointer_is_reported() {
        let a = [0.5];
        let b = [1.0];
        let st = unsafe { cdal_model_new(1, 1, 1, 1, a.as_ptr(), b.as_ptr(), ptr::null_mut()) };
        assert_eq!(st, CdalStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(cdal_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("out"));
    }

    #[test]
    fn default_config_matches_core_defaults() {
        let c = cdal_solver_config_default();
        let d = SolverConfig::default();
        assert_eq!((c.rho, c.n_out, c.n_in, c.eps_out, c.eps_in), (d.rho, d.n_out, d.n_in, d.eps_out, d.eps_in));
        assert!(c.warm_start);
    }
}
