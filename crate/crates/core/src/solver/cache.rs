use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::MpcProblem;

/// Number of later ARX residuals that contain `y_t`.
#[inline]
pub(crate) fn y_coupling(n_a: usize, horizon: usize, t: usize) -> usize {
    n_a.min(horizon - t)
}

/// Number of ARX residuals that contain `u_(t-1)`.
#[inline]
pub(crate) fn u_coupling(n_b: usize, horizon: usize, t: usize) -> usize {
    n_b.min(horizon - t + 1)
}

/// Diagonals of the block Hessians of `L_rho / rho` and their reciprocals.
/// Index `k` of the per-step lists belongs to `t = k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagCache {
    pub rho: f64,
    pub dy: Vec<DVector<f64>>,
    pub dy_inv: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub du_inv: Vec<DVector<f64>>,
    pub ddu: DVector<f64>,
    pub ddu_inv: DVector<f64>,
    /// `W_y / rho` and `W_du / rho`
    pub wy_rho: DVector<f64>,
    pub wdu_rho: DVector<f64>,
}

pub fn precompute_diagonals(p: &MpcProblem, rho: f64) -> Result<DiagCache> {
    DiagCache::new(p, rho)
}

impl DiagCache {
    pub fn new(p: &MpcProblem, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::NonPositiveRho(rho));
        }
        let horizon = p.horizon();
        let model = p.model();
        let s = p.settings();
        let wy_rho = &s.w_y / rho;
        let wdu_rho = &s.w_du / rho;

        // squared column norms of every lag matrix
        let a_cols: Vec<DVector<f64>> = model
            .a()
            .iter()
            .map(|a| DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.norm_squared())))
            .collect();
        let b_cols: Vec<DVector<f64>> = model
            .b()
            .iter()
            .map(|b| DVector::from_iterator(b.ncols(), b.column_iter().map(|c| c.norm_squared())))
            .collect();

        let mut dy = Vec::with_capacity(horizon);
        let mut du = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let mut d = wy_rho.add_scalar(1.0);
            for c in &a_cols[..y_coupling(model.n_a(), horizon, t)] {
                d += c;
            }
            dy.push(d);

            let own = if t < horizon { 2.0 } else { 1.0 };
            let mut d = DVector::from_element(p.n_u(), own);
            for c in &b_cols[..u_coupling(model.n_b(), horizon, t)] {
                d += c;
            }
            du.push(d);
        }
        let ddu = wdu_rho.add_scalar(1.0);
        let recip = |v: &DVector<f64>| v.map(|x| 1.0 / x);
        Ok(Self {
            rho,
            dy_inv: dy.iter().map(recip).collect(),
            du_inv: du.iter().map(recip).collect(),
            ddu_inv: recip(&ddu),
            dy,
            du,
            ddu,
            wy_rho,
            wdu_rho,
        })
    }
}

/// Full block Hessians for the explicit-offset pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockHessians {
    pub rho: f64,
    pub hy: Vec<DMatrix<f64>>,
    pub hu: Vec<DMatrix<f64>>,
    pub hdu: DMatrix<f64>,
}

impl BlockHessians {
    pub fn new(p: &MpcProblem, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::NonPositiveRho(rho));
        }
        let horizon = p.horizon();
        let model = p.model();
        let s = p.settings();
        let (n_y, n_u) = (p.n_y(), p.n_u());
        let mut hy = Vec::with_capacity(horizon);
        let mut hu = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let mut h = DMatrix::from_diagonal(&(&s.w_y / rho).add_scalar(1.0));
            for a in &model.a()[..y_coupling(model.n_a(), horizon, t)] {
                h += a.transpose() * a;
            }
            hy.push(h);

            let own = if t < horizon { 2.0 } else { 1.0 };
            let mut h = DMatrix::identity(n_u, n_u) * own;
            for b in &model.b()[..u_coupling(model.n_b(), horizon, t)] {
                h += b.transpose() * b;
            }
            hu.push(h);
        }
        debug_assert!(hy.iter().all(|h| h.nrows() == n_y));
        Ok(Self {
            rho,
            hy,
            hu,
            hdu: DMatrix::from_diagonal(&(&s.w_du / rho).add_scalar(1.0)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arx::{ArxHistory, ArxModel};
    use crate::problem::MpcSettings;

    fn problem(a1: DMatrix<f64>, w_du: f64, horizon: usize) -> MpcProblem {
        let model = ArxModel::new(vec![a1], vec![DMatrix::identity(2, 2) * 0.5]).unwrap();
        let mut s = MpcSettings::benchmark(horizon, 2, 2);
        s.w_du = DVector::from_element(2, w_du);
        MpcProblem::new(s, model.clone(), ArxHistory::zeros_for(&model), vec![DVector::zeros(2); horizon])
            .unwrap()
    }

    #[test]
    fn diagonal_examples() {
        let a1 = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let p = problem(a1, 0.1, 4);
        let c = DiagCache::new(&p, 1.0).unwrap();
        for t in 0..3 {
            assert!((c.dy[t][0] - 2.82).abs() < 1e-14);
            assert!((c.dy[t][1] - 2.82).abs() < 1e-14);
        }
        assert_eq!(c.dy[3].as_slice(), &[2.0, 2.0]);
        // u blocks: 2 + |B(1) col|^2 = 2.25 before the end, 1.25 at the end
        assert!((c.du[0][0] - 2.25).abs() < 1e-15);
        assert!((c.du[3][1] - 1.25).abs() < 1e-15);

        let c10 = DiagCache::new(&p, 10.0).unwrap();
        assert!((c10.ddu[0] - 1.01).abs() < 1e-15);
        assert!((c10.ddu_inv[1] - 1.0 / 1.01).abs() < 1e-15);
    }

    #[test]
    fn diagonals_match_block_hessians() {
        let model = ArxModel::time_varying_base();
        let p = MpcProblem::new(
            MpcSettings::benchmark(6, 2, 2),
            model.clone(),
            ArxHistory::zeros_for(&model),
            vec![DVector::zeros(2); 6],
        )
        .unwrap();
        let c = DiagCache::new(&p, 0.7).unwrap();
        let h = BlockHessians::new(&p, 0.7).unwrap();
        for t in 0..6 {
            assert!((h.hy[t].diagonal() - &c.dy[t]).amax() < 1e-14);
            assert!((h.hu[t].diagonal() - &c.du[t]).amax() < 1e-14);
            assert!(c.dy[t].iter().chain(c.du[t].iter()).all(|&x| x > 0.0));
        }
        assert!((h.hdu.diagonal() - &c.ddu).amax() < 1e-15);
    }

    #[test]
    fn rejects_bad_rho() {
        let p = problem(DMatrix::identity(2, 2), 0.1, 2);
        assert!(matches!(DiagCache::new(&p, -1.0), Err(Error::NonPositiveRho(_))));
        assert!(matches!(BlockHessians::new(&p, 0.0), Err(Error::NonPositiveRho(_))));
    }
}
