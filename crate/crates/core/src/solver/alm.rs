use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{residuals, DualPoint, MpcProblem, PrimalPoint};
use crate::solver::cache::{BlockHessians, DiagCache};
use crate::solver::pass::{cd_pass_coupled, cd_pass_naive};
use crate::solver::{SolveReport, SolveStatus, SolverConfig, SolverState};

/// Warm-start points may sit this far outside their box; they are clamped.
const WARM_START_SLACK: f64 = 1e-9;

/// `Lambda^k = Lambda_acc^(k-1) + res_arx(z)`, `Gamma^k = Gamma_acc^(k-1) + res_du(z)`,
/// written into the working duals.
pub fn dual_update(p: &MpcProblem, state: &mut SolverState) -> Result<()> {
    let res = residuals(p, &state.z)?;
    for ((w, acc), r) in state.lam_tilde.iter_mut().zip(&state.lam_acc).zip(&res.arx) {
        w.copy_from(acc);
        *w += r;
    }
    for ((w, acc), r) in state.gam_tilde.iter_mut().zip(&state.gam_acc).zip(&res.du) {
        w.copy_from(acc);
        *w += r;
    }
    Ok(())
}

/// Nesterov sequence `alpha_(k+1) = (1 + sqrt(1 + 4 alpha_k^2)) / 2`.
pub fn next_alpha(alpha: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * alpha * alpha).sqrt())
}

fn extrapolate(
    current: &[DVector<f64>],
    prev: &mut [DVector<f64>],
    acc: &mut [DVector<f64>],
    beta: f64,
) {
    for ((c, p), a) in current.iter().zip(prev.iter_mut()).zip(acc.iter_mut()) {
        // acc = c + beta (c - p)
        a.copy_from(c);
        a.axpy(beta, c, 1.0);
        a.axpy(-beta, p, 1.0);
        p.copy_from(c);
    }
}

/// Takes the working duals as `Lambda^k, Gamma^k` and forms the next
/// accelerated multipliers. With `use_acceleration == false` this reduces to
/// the plain update `Lambda_acc = Lambda^k` and `alpha` stays 1.
pub fn accelerate(state: &mut SolverState, use_acceleration: bool, accelerate_gamma: bool) {
    let (beta, alpha_next) = if use_acceleration {
        let next = next_alpha(state.alpha);
        ((state.alpha - 1.0) / next, next)
    } else {
        (0.0, state.alpha)
    };
    extrapolate(&state.lam_tilde, &mut state.lam_prev, &mut state.lam_acc, beta);
    let gamma_beta = if accelerate_gamma { beta } else { 0.0 };
    extrapolate(&state.gam_tilde, &mut state.gam_prev, &mut state.gam_acc, gamma_beta);
    state.alpha = alpha_next;
}

/// Forward simulation from the history with the input held at `u_-1` and
/// zero increments, clamped into the boxes; zero duals.
pub fn default_warm_start(p: &MpcProblem) -> Result<(PrimalPoint, DualPoint)> {
    let hold = p.history().past_u[0].clone();
    let mut z = p.simulate(&vec![hold; p.horizon()])?;
    let s = p.settings();
    for y in &mut z.y {
        clamp_into(y, &s.y_min, &s.y_max);
    }
    for u in &mut z.u {
        clamp_into(u, &s.u_min, &s.u_max);
    }
    for du in &mut z.du {
        du.fill(0.0);
        clamp_into(du, &s.du_min, &s.du_max);
    }
    Ok((z, DualPoint::zeros(p.horizon(), p.n_y(), p.n_u())))
}

fn clamp_into(v: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for i in 0..v.len() {
        v[i] = v[i].min(hi[i]).max(lo[i]);
    }
}

fn admit_warm(what: &str, list: &mut [DVector<f64>], lo: &DVector<f64>, hi: &DVector<f64>) -> Result<()> {
    for v in list.iter_mut() {
        for i in 0..v.len() {
            let excess = (lo[i] - v[i]).max(v[i] - hi[i]);
            if !v[i].is_finite() || excess > WARM_START_SLACK {
                return Err(Error::InfeasibleWarmStart {
                    what: what.into(),
                    index: i,
                    excess,
                });
            }
        }
        clamp_into(v, lo, hi);
    }
    Ok(())
}

fn sq_dist(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
}

/// Runs the accelerated ALM from a prepared state.
pub fn solve_from_state(p: &MpcProblem, state: &mut SolverState, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let diag = if cfg.use_coupled {
        Some(DiagCache::new(p, cfg.rho)?)
    } else {
        None
    };
    let blocks = if cfg.use_coupled {
        None
    } else {
        Some(BlockHessians::new(p, cfg.rho)?)
    };

    let mut status = SolveStatus::MaxIterations;
    let mut outer_residual = f64::INFINITY;
    let mut outer_iters = 0;
    let mut passes = 0;
    for _ in 0..cfg.n_out {
        outer_iters += 1;
        state.k_out += 1;
        dual_update(p, state)?;
        for _ in 0..cfg.n_in {
            let sigma = match (&diag, &blocks) {
                (Some(d), _) => cd_pass_coupled(p, state, d)?,
                (None, Some(h)) => cd_pass_naive(p, state, h)?,
                (None, None) => unreachable!("one cache is always built"),
            };
            passes += 1;
            if sigma <= cfg.eps_in {
                break;
            }
        }
        outer_residual = sq_dist(&state.lam_tilde, &state.lam_acc);
        if cfg.stop_on_gamma {
            outer_residual += sq_dist(&state.gam_tilde, &state.gam_acc);
        }
        if outer_residual <= cfg.eps_out {
            status = SolveStatus::Converged;
            break;
        }
        accelerate(state, cfg.use_acceleration, cfg.accelerate_gamma);
    }
    log::debug!(
        "solve: {:?} after {outer_iters} outer / {passes} passes, residual {outer_residual:.3e}",
        status
    );

    let duals = match status {
        SolveStatus::Converged => state.working_duals(),
        // after `accelerate` the latest Lambda^k lives in `lam_prev`
        SolveStatus::MaxIterations if outer_iters > 0 => DualPoint {
            lambda: state.lam_prev.clone(),
            gamma: state.gam_prev.clone(),
        },
        SolveStatus::MaxIterations => state.accelerated_duals(),
    };
    Ok(SolveReport {
        solution: state.z.clone(),
        duals,
        outer_iters,
        total_inner_passes: passes,
        outer_residual,
        status,
    })
}

/// Solves the MPC problem from an optional primal/dual warm start.
pub fn solve(
    p: &MpcProblem,
    warm: Option<(&PrimalPoint, &DualPoint)>,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let (z, duals) = match warm {
        Some((z, d)) => {
            p.check_primal(z)?;
            p.check_dual(d)?;
            let s = p.settings();
            let mut z = z.clone();
            admit_warm("Y", &mut z.y, &s.y_min, &s.y_max)?;
            admit_warm("U", &mut z.u, &s.u_min, &s.u_max)?;
            admit_warm("dU", &mut z.du, &s.du_min, &s.du_max)?;
            (z, d.clone())
        }
        None => default_warm_start(p)?,
    };
    let mut state = SolverState::new(p, z, duals)?;
    solve_from_state(p, &mut state, cfg)
}
