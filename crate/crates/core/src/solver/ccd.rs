use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, Error, Result};

/// One cyclic pass of projected coordinate descent on
/// `min 1/2 s'Ms + d's` over `lo <= s <= hi`, visiting `i = 1..n` in order.
/// Each coordinate sees the updates of the earlier ones. Returns `sigma` plus
/// the squared movement of the pass.
pub fn ccd_block(
    m: &DMatrix<f64>,
    d: &DVector<f64>,
    s: &mut DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    mut sigma: f64,
) -> Result<f64> {
    let n = s.len();
    if m.shape() != (n, n) {
        return Err(mismatch("CCD matrix", format!("{n}x{n}"), format!("{}x{}", m.nrows(), m.ncols())));
    }
    if d.len() != n || lo.len() != n || hi.len() != n {
        return Err(mismatch("CCD vectors", n, d.len().min(lo.len()).min(hi.len())));
    }
    for i in 0..n {
        let mii = m[(i, i)];
        if !(mii > 0.0) {
            return Err(Error::ZeroDiagonal { index: i, value: mii });
        }
        let grad = m.row(i).dot(&s.transpose()) + d[i];
        let next = (s[i] - grad / mii).min(hi[i]).max(lo[i]);
        let delta = next - s[i];
        sigma += delta * delta;
        s[i] = next;
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn decoupled_coordinates() {
        let m = DMatrix::identity(2, 2) * 2.0;
        let mut s = v(&[0.0, 0.0]);
        let sigma = ccd_block(&m, &v(&[-2.0, 2.0]), &mut s, &v(&[-1.0, -1.0]), &v(&[1.0, 1.0]), 0.0).unwrap();
        assert_eq!(s.as_slice(), &[1.0, -1.0]);
        assert_eq!(sigma, 2.0);
    }

    #[test]
    fn coupled_hand_trace() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let mut s = v(&[0.0, 0.0]);
        let sigma = ccd_block(&m, &v(&[-3.0, 0.0]), &mut s, &v(&[-10.0, -10.0]), &v(&[10.0, 10.0]), 0.0).unwrap();
        assert_eq!(s.as_slice(), &[1.5, -0.75]);
        assert_eq!(sigma, 2.8125);
    }

    #[test]
    fn fixed_point_does_not_move() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        // minimizer of 1/2 s'Ms + d's is -M^-1 d = [1, -1] for d = [-1, 1]
        let mut s = v(&[1.0, -1.0]);
        let sigma = ccd_block(&m, &v(&[-1.0, 1.0]), &mut s, &v(&[-5.0, -5.0]), &v(&[5.0, 5.0]), 0.25).unwrap();
        assert_eq!(s.as_slice(), &[1.0, -1.0]);
        assert_eq!(sigma, 0.25);
    }

    #[test]
    fn zero_diagonal_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let mut s = v(&[0.0, 0.0]);
        let err = ccd_block(&m, &v(&[0.0, 0.0]), &mut s, &v(&[-1.0, -1.0]), &v(&[1.0, 1.0]), 0.0).unwrap_err();
        assert_eq!(err, Error::ZeroDiagonal { index: 1, value: 0.0 });
    }
}
