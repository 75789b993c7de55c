use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{DualPoint, MpcProblem, PrimalPoint};

/// Linear terms of the three block subproblems at step `t`: with every other
/// block frozen, `L_rho / rho` restricted to a block `s` is
/// `1/2 s'Hs + offset's + const`.
#[derive(Debug, Clone, PartialEq)]
pub struct Offsets {
    /// for `y_t`
    pub e: DVector<f64>,
    /// for `u_(t-1)`
    pub f: DVector<f64>,
    /// for `du_(t-1)`
    pub g: DVector<f64>,
}

/// `sum_{i != skip_a} A(i) y_(s-i) + sum_{i != skip_b} B(i) u_(s-i)`, lags 1-based.
fn arx_sum_excluding(
    p: &MpcProblem,
    z: &PrimalPoint,
    s: isize,
    skip_a: Option<usize>,
    skip_b: Option<usize>,
) -> DVector<f64> {
    let mut acc = DVector::zeros(p.n_y());
    for (k, a) in p.model().a().iter().enumerate() {
        if skip_a != Some(k + 1) {
            acc.gemv(1.0, a, p.output_at(z, s - 1 - k as isize), 1.0);
        }
    }
    for (k, b) in p.model().b().iter().enumerate() {
        if skip_b != Some(k + 1) {
            acc.gemv(1.0, b, p.input_at(z, s - 1 - k as isize), 1.0);
        }
    }
    acc
}

/// Explicit offsets for step `t` (1-based) under multipliers `lambda`,
/// `gamma` (lists indexed like [`DualPoint`]).
///
/// ```text
/// e_t = -(W_y/rho) r_t - (lambda_t + sum_i A(i) y_(t-i) + sum_i B(i) u_(t-i))
///       + sum_{n=1..min(n_a,T-t)} A(n)' (lambda_(t+n)
///             + sum_{i!=n} A(i) y_(t+n-i) + sum_i B(i) u_(t+n-i) - y_(t+n))
/// f_t = -(gamma_t + u_(t-2) + du_(t-1))
///       + [t<T] (gamma_(t+1) + du_t - u_t)
///       + sum_{n=1..min(n_b,T-t+1)} B(n)' (lambda_(t-1+n)
///             + sum_i A(i) y_(t-1+n-i) + sum_{i!=n} B(i) u_(t-1+n-i) - y_(t-1+n))
/// g_t = gamma_t + u_(t-2) - u_(t-1)
/// ```
///
/// `f_t` is the offset of `u_(t-1)`: the ARX residuals containing it are
/// `t-1+n`, and `u_t` enters the next increment residual with a minus sign.
pub(crate) fn offsets_with(
    p: &MpcProblem,
    z: &PrimalPoint,
    lambda: &[DVector<f64>],
    gamma: &[DVector<f64>],
    wy_rho: &DVector<f64>,
    t: usize,
) -> Offsets {
    let horizon = p.horizon();
    let model = p.model();
    let ti = t as isize;
    let lam = |s: isize| &lambda[(s - 1) as usize];
    let gam = |s: isize| &gamma[(s - 1) as usize];

    let mut e = -wy_rho.component_mul(&p.refs()[t - 1]);
    e -= lam(ti) + arx_sum_excluding(p, z, ti, None, None);
    for n in 1..=model.n_a().min(horizon - t) {
        let s = ti + n as isize;
        let inner = lam(s) + arx_sum_excluding(p, z, s, Some(n), None) - p.output_at(z, s);
        e.gemv_tr(1.0, &model.a()[n - 1], &inner, 1.0);
    }

    let mut f = -(gam(ti) + p.input_at(z, ti - 2) + &z.du[t - 1]);
    if t < horizon {
        f += gam(ti + 1) + &z.du[t] - &z.u[t];
    }
    for n in 1..=model.n_b().min(horizon - t + 1) {
        let s = ti - 1 + n as isize;
        let inner = lam(s) + arx_sum_excluding(p, z, s, None, Some(n)) - p.output_at(z, s);
        f.gemv_tr(1.0, &model.b()[n - 1], &inner, 1.0);
    }

    let g = gam(ti) + p.input_at(z, ti - 2) - p.input_at(z, ti - 1);
    Offsets { e, f, g }
}

pub fn compute_offsets(
    p: &MpcProblem,
    z: &PrimalPoint,
    duals: &DualPoint,
    rho: f64,
    t: usize,
) -> Result<Offsets> {
    if t == 0 || t > p.horizon() {
        return Err(Error::IndexOutOfRange {
            index: t,
            max: p.horizon(),
        });
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::NonPositiveRho(rho));
    }
    p.check_primal(z)?;
    p.check_dual(duals)?;
    let wy_rho = &p.settings().w_y / rho;
    Ok(offsets_with(p, z, &duals.lambda, &duals.gamma, &wy_rho, t))
}
