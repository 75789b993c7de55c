//! Operator-splitting (ADMM) solver for the explicit QP, in the OSQP form
//!
//! ```text
//! min 1/2 x'Px + q'x   s.t.  l <= Ax <= u,   A = [E; I]
//! ```
//!
//! with a dense Cholesky factor of `P + sigma I + A'RA`, step-size
//! rebalancing, and an active-set polish that solves the equality system of
//! the guessed active set exactly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::qp::kkt::solve_face;
use crate::qp::SparseQp;

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmSettings {
    pub rho: f64,
    /// Equality rows use `eq_rho_scale * rho`.
    pub eq_rho_scale: f64,
    pub sigma: f64,
    /// Over-relaxation in `(0, 2)`.
    pub alpha: f64,
    pub max_iter: usize,
    pub check_interval: usize,
    pub adapt_interval: usize,
    pub polish: bool,
    /// Residual level below which polishing is attempted.
    pub polish_trigger: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            eq_rho_scale: 1e3,
            sigma: 1e-6,
            alpha: 1.6,
            max_iter: 50_000,
            check_interval: 10,
            adapt_interval: 50,
            polish: true,
            polish_trigger: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub z: DVector<f64>,
    /// Multipliers of `[E; I]`, equality rows first.
    pub y: DVector<f64>,
    pub iterations: usize,
    pub polished: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

struct Kkt {
    chol: Cholesky<f64, Dyn>,
    rho: f64,
}

fn factor(qp: &SparseQp, s: &AdmmSettings, rho: f64) -> Result<Kkt> {
    let n = qp.n();
    let rho_eq = rho * s.eq_rho_scale;
    let mut k = &qp.hessian + DMatrix::identity(n, n) * (s.sigma + rho);
    k += qp.eq_matrix.tr_mul(&qp.eq_matrix) * rho_eq;
    let chol = Cholesky::new(k).ok_or_else(|| Error::InvalidConfig("ADMM system is not positive definite".into()))?;
    Ok(Kkt { chol, rho })
}

/// `(|Ax - z|_inf, |Px + q + A'y|_inf)` for the stacked constraint matrix.
fn kkt_residuals(qp: &SparseQp, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let m = qp.m();
    let ex = &qp.eq_matrix * x;
    let mut prim: f64 = 0.0;
    for r in 0..m {
        prim = prim.max((ex[r] - z[r]).abs());
    }
    for i in 0..qp.n() {
        prim = prim.max((x[i] - z[m + i]).abs());
    }
    let mut grad = &qp.hessian * x + &qp.linear;
    grad.gemv_tr(1.0, &qp.eq_matrix, &y.rows(0, m), 1.0);
    grad += y.rows(m, qp.n());
    (prim, grad.amax())
}

/// Equality-face solve on the active set suggested by the ADMM iterate, kept
/// only when it satisfies the KKT conditions to `tol`.
fn polish(qp: &SparseQp, z: &DVector<f64>, y: &DVector<f64>, tol: f64) -> Option<ReferenceSolution> {
    let (n, m) = (qp.n(), qp.m());
    let fixed: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let (zi, yi) = (z[m + i], y[m + i]);
            if zi - qp.lower[i] < -yi {
                Some(qp.lower[i])
            } else if qp.upper[i] - zi < yi {
                Some(qp.upper[i])
            } else {
                None
            }
        })
        .collect();
    let (x, nu) = solve_face(qp, &fixed)?;

    let mut grad = &qp.hessian * &x + &qp.linear;
    grad.gemv_tr(1.0, &qp.eq_matrix, &nu, 1.0);
    let mut y_out = DVector::zeros(m + n);
    y_out.rows_mut(0, m).copy_from(&nu);
    for i in 0..n {
        match fixed[i] {
            Some(v) if v == qp.lower[i] && grad[i] < -tol => return None,
            Some(v) if v == qp.upper[i] && v != qp.lower[i] && grad[i] > tol => return None,
            Some(_) => y_out[m + i] = -grad[i],
            None => {
                if x[i] < qp.lower[i] - tol || x[i] > qp.upper[i] + tol {
                    return None;
                }
            }
        }
    }
    let mut z_out = DVector::zeros(m + n);
    z_out.rows_mut(0, m).copy_from(&qp.eq_rhs);
    z_out.rows_mut(m, n).copy_from(&x.zip_zip_map(&qp.lower, &qp.upper, |v, l, u| v.min(u).max(l)));
    let x = z_out.rows(m, n).into_owned();
    let (prim, dual) = kkt_residuals(qp, &x, &z_out, &y_out);
    (prim <= tol && dual <= tol).then_some(ReferenceSolution {
        z: x,
        y: y_out,
        iterations: 0,
        polished: true,
        primal_residual: prim,
        dual_residual: dual,
    })
}

pub fn reference_solve(qp: &SparseQp, tol: f64) -> Result<ReferenceSolution> {
    reference_solve_with(qp, tol, &AdmmSettings::default(), None)
}

/// ADMM from an optional warm start `(x, y)`; deterministic given inputs.
pub fn reference_solve_with(
    qp: &SparseQp,
    tol: f64,
    s: &AdmmSettings,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<ReferenceSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let (n, m) = (qp.n(), qp.m());
    let lo = DVector::from_iterator(m + n, qp.eq_rhs.iter().chain(qp.lower.iter()).copied());
    let hi = DVector::from_iterator(m + n, qp.eq_rhs.iter().chain(qp.upper.iter()).copied());

    let (mut x, mut y) = match warm {
        Some((x, y)) if x.len() == n && y.len() == m + n => (x.clone(), y.clone()),
        _ => (DVector::zeros(n), DVector::zeros(m + n)),
    };
    let ax = |x: &DVector<f64>| {
        let mut out = DVector::zeros(m + n);
        out.rows_mut(0, m).copy_from(&(&qp.eq_matrix * x));
        out.rows_mut(m, n).copy_from(x);
        out
    };
    let mut z = ax(&x).zip_zip_map(&lo, &hi, |v, l, u| v.min(u).max(l));
    let mut kkt = factor(qp, s, s.rho)?;

    for iter in 1..=s.max_iter {
        let rho = kkt.rho;
        let rho_eq = rho * s.eq_rho_scale;
        let r_of = |i: usize| if i < m { rho_eq } else { rho };

        // (P + sigma I + A'RA) x~ = sigma x - q + A'(R z - y)
        let w = DVector::from_fn(m + n, |i, _| r_of(i) * z[i] - y[i]);
        let mut rhs = &x * s.sigma - &qp.linear;
        rhs.gemv_tr(1.0, &qp.eq_matrix, &w.rows(0, m), 1.0);
        rhs += w.rows(m, n);
        let x_tilde = kkt.chol.solve(&rhs);
        let z_tilde = ax(&x_tilde);

        x = &x_tilde * s.alpha + &x * (1.0 - s.alpha);
        let z_relax = &z_tilde * s.alpha + &z * (1.0 - s.alpha);
        let z_next = DVector::from_fn(m + n, |i, _| (z_relax[i] + y[i] / r_of(i)).min(hi[i]).max(lo[i]));
        for i in 0..m + n {
            y[i] += r_of(i) * (z_relax[i] - z_next[i]);
        }
        z = z_next;

        if iter % s.check_interval == 0 {
            let (prim, dual) = kkt_residuals(qp, &x, &z, &y);
            if prim <= tol && dual <= tol {
                return Ok(ReferenceSolution {
                    z: x,
                    y,
                    iterations: iter,
                    polished: false,
                    primal_residual: prim,
                    dual_residual: dual,
                });
            }
            if s.polish && prim <= s.polish_trigger && dual <= s.polish_trigger {
                if let Some(mut sol) = polish(qp, &z, &y, tol) {
                    sol.iterations = iter;
                    return Ok(sol);
                }
            }
            if iter % s.adapt_interval == 0 {
                let ax_n = ax(&x).amax().max(z.amax()).max(1e-12);
                let mut aty = qp.eq_matrix.tr_mul(&y.rows(0, m).into_owned());
                aty += y.rows(m, n);
                let dual_scale = (&qp.hessian * &x).amax().max(aty.amax()).max(qp.linear.amax()).max(1e-12);
                let ratio = ((prim / ax_n) / (dual / dual_scale).max(1e-30)).sqrt();
                let new_rho = (rho * ratio).clamp(1e-6, 1e6);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    kkt = factor(qp, s, new_rho)?;
                }
            }
        }
    }
    Err(Error::MaxIterationsExceeded {
        iterations: s.max_iter,
    })
}
