use crate::error::Result;
use crate::solver::alm::dual_update;
use crate::solver::cache::{u_coupling, y_coupling, BlockHessians, DiagCache};
use crate::solver::ccd::ccd_block;
use crate::solver::offsets::offsets_with;
use crate::solver::SolverState;
use crate::problem::MpcProblem;

/// One full pass over the blocks `y_t, u_(t-1), du_(t-1)`, `t = 1..T`, each
/// block minimized by [`ccd_block`] against explicitly recomputed offsets.
/// Multipliers are the accelerated duals of `state`. The working duals are
/// resynchronized at the end. Returns the squared movement of the pass.
pub fn cd_pass_naive(p: &MpcProblem, state: &mut SolverState, hess: &BlockHessians) -> Result<f64> {
    let s = p.settings();
    let wy_rho = &s.w_y / hess.rho;
    let mut sigma = 0.0;
    for t in 1..=p.horizon() {
        let k = t - 1;
        let e = offsets_with(p, &state.z, &state.lam_acc, &state.gam_acc, &wy_rho, t).e;
        sigma = ccd_block(&hess.hy[k], &e, &mut state.z.y[k], &s.y_min, &s.y_max, sigma)?;

        let f = offsets_with(p, &state.z, &state.lam_acc, &state.gam_acc, &wy_rho, t).f;
        sigma = ccd_block(&hess.hu[k], &f, &mut state.z.u[k], &s.u_min, &s.u_max, sigma)?;

        let g = offsets_with(p, &state.z, &state.lam_acc, &state.gam_acc, &wy_rho, t).g;
        sigma = ccd_block(&hess.hdu, &g, &mut state.z.du[k], &s.du_min, &s.du_max, sigma)?;
    }
    state.sigma = sigma;
    state.k_in += 1;
    dual_update(p, state)?;
    Ok(sigma)
}

#[inline]
fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.min(hi).max(lo)
}

/// Same visiting order and iterates as [`cd_pass_naive`], but every
/// coordinate gradient is read from the working duals, which are patched
/// after each move so that they keep equal `accelerated dual + residual`.
pub fn cd_pass_coupled(p: &MpcProblem, state: &mut SolverState, cache: &DiagCache) -> Result<f64> {
    let horizon = p.horizon();
    let model = p.model();
    let (a, b) = (model.a(), model.b());
    let s = p.settings();
    let refs = p.refs();
    let (n_y, n_u) = (p.n_y(), p.n_u());
    let SolverState {
        z,
        lam_tilde: lam,
        gam_tilde: gam,
        ..
    } = state;

    let mut sigma = 0.0;
    for t in 1..=horizon {
        let k = t - 1;

        // y_t: coefficient -1 in its own residual, +A(n) in residual t+n
        let jy = y_coupling(model.n_a(), horizon, t);
        for i in 0..n_y {
            let mut grad = cache.wy_rho[i] * (z.y[k][i] - refs[k][i]) - lam[k][i];
            for n in 1..=jy {
                grad += a[n - 1].column(i).dot(&lam[k + n]);
            }
            let theta = clamp(z.y[k][i] - grad * cache.dy_inv[k][i], s.y_min[i], s.y_max[i]);
            let delta = theta - z.y[k][i];
            sigma += delta * delta;
            z.y[k][i] = theta;
            lam[k][i] -= delta;
            for n in 1..=jy {
                lam[k + n].axpy(delta, &a[n - 1].column(i), 1.0);
            }
        }

        // u_(t-1): -1 in increment residual t, +1 in t+1, +B(n) in ARX residual t-1+n
        let ju = u_coupling(model.n_b(), horizon, t);
        for i in 0..n_u {
            let mut grad = -gam[k][i];
            if t < horizon {
                grad += gam[k + 1][i];
            }
            for n in 1..=ju {
                grad += b[n - 1].column(i).dot(&lam[k + n - 1]);
            }
            let theta = clamp(z.u[k][i] - grad * cache.du_inv[k][i], s.u_min[i], s.u_max[i]);
            let delta = theta - z.u[k][i];
            sigma += delta * delta;
            z.u[k][i] = theta;
            gam[k][i] -= delta;
            if t < horizon {
                gam[k + 1][i] += delta;
            }
            for n in 1..=ju {
                lam[k + n - 1].axpy(delta, &b[n - 1].column(i), 1.0);
            }
        }

        // du_(t-1): +1 in increment residual t
        for i in 0..n_u {
            let grad = cache.wdu_rho[i] * z.du[k][i] + gam[k][i];
            let theta = clamp(z.du[k][i] - grad * cache.ddu_inv[i], s.du_min[i], s.du_max[i]);
            let delta = theta - z.du[k][i];
            sigma += delta * delta;
            z.du[k][i] = theta;
            gam[k][i] += delta;
        }
    }
    state.sigma = sigma;
    state.k_in += 1;
    Ok(sigma)
}
