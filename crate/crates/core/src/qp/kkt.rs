use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::SparseQp;

const RANK_TOL: f64 = 1e-10;

/// Numerical rank of the equality matrix.
pub fn equality_rank(qp: &SparseQp) -> usize {
    if qp.m() == 0 {
        return 0;
    }
    let sv = qp.eq_matrix.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|&&s| s > RANK_TOL * top.max(1.0)).count()
}

/// Minimizer of `1/2 z'Hz + h'z` subject to `Ez = b` and `z_i = fixed_i` for
/// every `Some` entry, with the equality multipliers. Solved on the reduced
/// KKT system (LU, or an SVD pseudo-inverse when singular); `None` when it is
/// inconsistent (no stationary point on the face).
pub(crate) fn solve_face(
    qp: &SparseQp,
    fixed: &[Option<f64>],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.n();
    let m = qp.m();
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let nf = free.len();

    let mut z = DVector::zeros(n);
    for (i, f) in fixed.iter().enumerate() {
        if let Some(v) = f {
            z[i] = *v;
        }
    }

    let dim = nf + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    // rhs_f = -h_f - H_fa z_a ; rhs_eq = b - E_a z_a
    let hz = &qp.hessian * &z;
    let ez = &qp.eq_matrix * &z;
    for (a, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            kkt[(a, c)] = qp.hessian[(i, j)];
        }
        for r in 0..m {
            kkt[(a, nf + r)] = qp.eq_matrix[(r, i)];
            kkt[(nf + r, a)] = qp.eq_matrix[(r, i)];
        }
        rhs[a] = -qp.linear[i] - hz[i];
    }
    for r in 0..m {
        rhs[nf + r] = qp.eq_rhs[r] - ez[r];
    }
    if dim == 0 {
        return Some((z, DVector::zeros(0)));
    }

    let scale = kkt.amax().max(rhs.amax()).max(1.0);
    let consistent = |x: &DVector<f64>| (&kkt * x - &rhs).amax() <= 1e-9 * scale;
    // LU handles the nonsingular faces; the pseudo-inverse covers the rest
    let sol = match kkt.clone().lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) && consistent(&x) => x,
        _ => {
            let x = kkt.clone().svd(true, true).solve(&rhs, 1e-12 * scale).ok()?;
            if !consistent(&x) {
                return None;
            }
            x
        }
    };
    for (a, &i) in free.iter().enumerate() {
        z[i] = sol[a];
    }
    Some((z, sol.rows(nf, m).into_owned()))
}

/// Solves the equality-constrained QP (bounds ignored) through its KKT
/// system. Fails when the stacked equality matrix is not full row rank.
pub fn kkt_equality_solve(qp: &SparseQp) -> Result<DVector<f64>> {
    let (n, m) = (qp.n(), qp.m());
    let rank = equality_rank(qp);
    if rank < m {
        return Err(Error::RankDeficient { rank, rows: m });
    }
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
    kkt.view_mut((0, n), (n, m)).copy_from(&qp.eq_matrix.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&qp.eq_matrix);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-&qp.linear));
    rhs.rows_mut(n, m).copy_from(&qp.eq_rhs);
    let sol = kkt.full_piv_lu().solve(&rhs).ok_or(Error::RankDeficient {
        rank,
        rows: m,
    })?;
    Ok(sol.rows(0, n).into_owned())
}
