use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{mismatch, Result};
use crate::problem::MpcProblem;

/// `min 1/2 z'Hz + h'z + c  s.t.  Ez = b,  lo <= z <= hi`.
///
/// For MPC problems the variables follow the interleaved order
/// `[y_1, u_0, du_0, .., y_T, u_(T-1), du_(T-1)]`; the first `T n_y`
/// equality rows are the ARX constraints and the remaining `T n_u` rows the
/// increment constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseQp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// Constant `1/2 sum r_t' W_y r_t`, kept so objective values compare exactly.
    pub constant: f64,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl SparseQp {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        eq_matrix: DMatrix<f64>,
        eq_rhs: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = linear.len();
        if hessian.shape() != (n, n) {
            return Err(mismatch("H", format!("{n}x{n}"), format!("{:?}", hessian.shape())));
        }
        if eq_matrix.ncols() != n || eq_matrix.nrows() != eq_rhs.len() {
            return Err(mismatch(
                "E",
                format!("{}x{n}", eq_rhs.len()),
                format!("{:?}", eq_matrix.shape()),
            ));
        }
        if lower.len() != n || upper.len() != n {
            return Err(mismatch("bounds", n, lower.len().min(upper.len())));
        }
        Ok(Self {
            hessian,
            linear,
            constant: 0.0,
            eq_matrix,
            eq_rhs,
            lower,
            upper,
        })
    }

    pub fn n(&self) -> usize {
        self.linear.len()
    }

    pub fn m(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z) + self.constant
    }

    pub fn eq_residual(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.eq_matrix * z - &self.eq_rhs
    }

    /// Nonzeros of `H` and `E` as `(row, col, value)` triplets with the dense
    /// vectors alongside.
    pub fn to_triplets(&self) -> QpTriplets {
        let triplets = |m: &DMatrix<f64>| {
            let mut out = Vec::new();
            for c in 0..m.ncols() {
                for r in 0..m.nrows() {
                    let v = m[(r, c)];
                    if v != 0.0 {
                        out.push((r, c, v));
                    }
                }
            }
            out
        };
        QpTriplets {
            n: self.n(),
            m: self.m(),
            hessian: triplets(&self.hessian),
            h: self.linear.as_slice().to_vec(),
            constant: self.constant,
            eq_matrix: triplets(&self.eq_matrix),
            b: self.eq_rhs.as_slice().to_vec(),
            lo: self.lower.as_slice().to_vec(),
            hi: self.upper.as_slice().to_vec(),
        }
    }
}

/// JSON dump of a [`SparseQp`].
#[derive(Debug, Clone, Serialize)]
pub struct QpTriplets {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "H")]
    pub hessian: Vec<(usize, usize, f64)>,
    pub h: Vec<f64>,
    #[serde(rename = "c")]
    pub constant: f64,
    #[serde(rename = "E")]
    pub eq_matrix: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Index helpers for the interleaved variable order.
#[derive(Debug, Clone, Copy)]
pub struct QpLayout {
    pub horizon: usize,
    pub n_y: usize,
    pub n_u: usize,
}

impl QpLayout {
    pub fn of(p: &MpcProblem) -> Self {
        Self {
            horizon: p.horizon(),
            n_y: p.n_y(),
            n_u: p.n_u(),
        }
    }

    fn block(&self) -> usize {
        self.n_y + 2 * self.n_u
    }

    /// Column of `y_t`, `t >= 1`.
    pub fn y(&self, t: usize) -> usize {
        (t - 1) * self.block()
    }

    /// Column of `u_s`, `s >= 0`.
    pub fn u(&self, s: usize) -> usize {
        s * self.block() + self.n_y
    }

    /// Column of `du_s`, `s >= 0`.
    pub fn du(&self, s: usize) -> usize {
        s * self.block() + self.n_y + self.n_u
    }
}

fn put(dst: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>, scale: f64) {
    for r in 0..block.nrows() {
        for c in 0..block.ncols() {
            dst[(row + r, col + c)] += scale * block[(r, c)];
        }
    }
}

/// Explicit sparse (output-keeping) QP equivalent to the MPC problem.
pub fn build_sparse_qp(p: &MpcProblem) -> Result<SparseQp> {
    let lay = QpLayout::of(p);
    let (horizon, n_y, n_u) = (lay.horizon, lay.n_y, lay.n_u);
    let n = p.n_z();
    let m = horizon * (n_y + n_u);
    let s = p.settings();
    let model = p.model();
    let hist = p.history();

    let mut hess = DMatrix::zeros(n, n);
    let mut lin = DVector::zeros(n);
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    let mut constant = 0.0;
    for t in 1..=horizon {
        let r = &p.refs()[t - 1];
        for i in 0..n_y {
            let c = lay.y(t) + i;
            hess[(c, c)] = s.w_y[i];
            lin[c] = -s.w_y[i] * r[i];
            constant += 0.5 * s.w_y[i] * r[i] * r[i];
            lower[c] = s.y_min[i];
            upper[c] = s.y_max[i];
        }
        for i in 0..n_u {
            let (cu, cd) = (lay.u(t - 1) + i, lay.du(t - 1) + i);
            hess[(cd, cd)] = s.w_du[i];
            lower[cu] = s.u_min[i];
            upper[cu] = s.u_max[i];
            lower[cd] = s.du_min[i];
            upper[cd] = s.du_max[i];
        }
    }

    let mut e = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let eye_y = DMatrix::identity(n_y, n_y);
    let eye_u = DMatrix::identity(n_u, n_u);
    for t in 1..=horizon {
        let row = (t - 1) * n_y;
        put(&mut e, row, lay.y(t), &eye_y, -1.0);
        for (k, a) in model.a().iter().enumerate() {
            let lag = t as isize - 1 - k as isize;
            if lag >= 1 {
                put(&mut e, row, lay.y(lag as usize), a, 1.0);
            } else {
                let known = a * &hist.past_y[(-lag) as usize];
                b.rows_mut(row, n_y).axpy(-1.0, &known, 1.0);
            }
        }
        for (k, bm) in model.b().iter().enumerate() {
            let lag = t as isize - 1 - k as isize;
            if lag >= 0 {
                put(&mut e, row, lay.u(lag as usize), bm, 1.0);
            } else {
                let known = bm * &hist.past_u[(-lag - 1) as usize];
                b.rows_mut(row, n_y).axpy(-1.0, &known, 1.0);
            }
        }

        // u_(t-2) + du_(t-1) - u_(t-1) = 0
        let row = horizon * n_y + (t - 1) * n_u;
        put(&mut e, row, lay.du(t - 1), &eye_u, 1.0);
        put(&mut e, row, lay.u(t - 1), &eye_u, -1.0);
        if t >= 2 {
            put(&mut e, row, lay.u(t - 2), &eye_u, 1.0);
        } else {
            b.rows_mut(row, n_u).axpy(-1.0, &hist.past_u[0], 1.0);
        }
    }

    let mut qp = SparseQp::new(hess, lin, e, b, lower, upper)?;
    qp.constant = constant;
    Ok(qp)
}
