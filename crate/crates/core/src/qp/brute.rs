use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::qp::kkt::solve_face;
use crate::qp::SparseQp;

/// Largest problem the enumeration accepts (`3^12` faces).
pub const BRUTE_FORCE_LIMIT: usize = 12;

const FEAS_TOL: f64 = 1e-9;

/// Exhaustive active-set search: every variable is assigned to its lower
/// bound, its upper bound, or free; each face is solved as an
/// equality-constrained QP and the best feasible candidate is kept. The true
/// minimizer is the face solution of its own active set, so the minimum
/// over feasible candidates is the global minimum.
pub fn brute_force_active_set(qp: &SparseQp) -> Result<DVector<f64>> {
    let n = qp.n();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let faces = 3usize.pow(n as u32);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut fixed = vec![None; n];
    for code in 0..faces {
        let mut c = code;
        for (i, f) in fixed.iter_mut().enumerate() {
            *f = match c % 3 {
                0 => None,
                1 => Some(qp.lower[i]),
                _ => Some(qp.upper[i]),
            };
            c /= 3;
        }
        // faces that pin a variable to an equal lower and upper bound twice are duplicates
        if (0..n).any(|i| qp.lower[i] == qp.upper[i] && code / 3usize.pow(i as u32) % 3 == 2) {
            continue;
        }
        let Some((z, _)) = solve_face(qp, &fixed) else {
            continue;
        };
        let feasible = (0..n).all(|i| z[i] >= qp.lower[i] - FEAS_TOL && z[i] <= qp.upper[i] + FEAS_TOL)
            && qp.eq_residual(&z).amax() <= FEAS_TOL;
        if !feasible {
            continue;
        }
        let z = z.zip_zip_map(&qp.lower, &qp.upper, |v, l, u| v.min(u).max(l));
        let obj = qp.objective(&z);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, z));
        }
    }
    best.map(|(_, z)| z)
        .ok_or_else(|| Error::InvalidConfig("no feasible point found; the QP is infeasible".into()))
}
