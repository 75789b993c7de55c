//! The ARX tracking MPC problem
//!
//! ```text
//! min  1/2 sum_{t=1..T} |y_t - r_t|^2_{W_y} + |du_{t-1}|^2_{W_du}
//! s.t. y_t = sum_i A(i) y_{t-i} + sum_i B(i) u_{t-i},   t = 1..T
//!      du_t = u_t - u_{t-1},                             t = 0..T-1
//!      box bounds on y, u, du
//! ```
//!
//! and the scaled augmented Lagrangian built on its two equality families.
//! Duals are stored scaled: the unscaled multiplier is `rho * lambda`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::arx::{ArxHistory, ArxModel};
use crate::error::{mismatch, Error, Result};
use crate::serde_util::{dvec, dvec_list};

/// Horizon, diagonal weights and box bounds; everything in a problem except
/// the model, the history and the references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSettings {
    pub horizon: usize,
    #[serde(with = "dvec")]
    pub w_y: DVector<f64>,
    #[serde(with = "dvec")]
    pub w_du: DVector<f64>,
    #[serde(with = "dvec")]
    pub y_min: DVector<f64>,
    #[serde(with = "dvec")]
    pub y_max: DVector<f64>,
    #[serde(with = "dvec")]
    pub u_min: DVector<f64>,
    #[serde(with = "dvec")]
    pub u_max: DVector<f64>,
    #[serde(with = "dvec")]
    pub du_min: DVector<f64>,
    #[serde(with = "dvec")]
    pub du_max: DVector<f64>,
}

impl MpcSettings {
    /// `W_y = I`, `W_du = 0.1 I` and all boxes `[-1, 1]`.
    pub fn benchmark(horizon: usize, n_y: usize, n_u: usize) -> Self {
        Self {
            horizon,
            w_y: DVector::from_element(n_y, 1.0),
            w_du: DVector::from_element(n_u, 0.1),
            y_min: DVector::from_element(n_y, -1.0),
            y_max: DVector::from_element(n_y, 1.0),
            u_min: DVector::from_element(n_u, -1.0),
            u_max: DVector::from_element(n_u, 1.0),
            du_min: DVector::from_element(n_u, -1.0),
            du_max: DVector::from_element(n_u, 1.0),
        }
    }

    pub fn n_y(&self) -> usize {
        self.w_y.len()
    }

    pub fn n_u(&self) -> usize {
        self.w_du.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::LengthMismatch {
                what: "horizon".into(),
                expected: 1,
                actual: 0,
            });
        }
        let (n_y, n_u) = (self.n_y(), self.n_u());
        for (what, v, n) in [
            ("y_min", &self.y_min, n_y),
            ("y_max", &self.y_max, n_y),
            ("u_min", &self.u_min, n_u),
            ("u_max", &self.u_max, n_u),
            ("du_min", &self.du_min, n_u),
            ("du_max", &self.du_max, n_u),
        ] {
            if v.len() != n {
                return Err(mismatch(what, n, v.len()));
            }
        }
        for (what, w) in [("w_y", &self.w_y), ("w_du", &self.w_du)] {
            for (index, &value) in w.iter().enumerate() {
                if !value.is_finite() {
                    return Err(Error::NonFiniteEntry {
                        what: what.into(),
                        index,
                    });
                }
                if value < 0.0 {
                    return Err(Error::NegativeWeight {
                        what: what.into(),
                        index,
                        value,
                    });
                }
            }
        }
        for (what, lo, hi) in [
            ("y", &self.y_min, &self.y_max),
            ("u", &self.u_min, &self.u_max),
            ("du", &self.du_min, &self.du_max),
        ] {
            for (index, (&lower, &upper)) in lo.iter().zip(hi.iter()).enumerate() {
                if !lower.is_finite() || !upper.is_finite() {
                    return Err(Error::NonFiniteEntry {
                        what: format!("{what} bounds"),
                        index,
                    });
                }
                if lower > upper {
                    return Err(Error::BoundOrderViolation {
                        what: what.into(),
                        index,
                        lower,
                        upper,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawMpcProblem {
    pub horizon: usize,
    #[serde(with = "dvec")]
    pub w_y: DVector<f64>,
    #[serde(with = "dvec")]
    pub w_du: DVector<f64>,
    #[serde(with = "dvec")]
    pub y_min: DVector<f64>,
    #[serde(with = "dvec")]
    pub y_max: DVector<f64>,
    #[serde(with = "dvec")]
    pub u_min: DVector<f64>,
    #[serde(with = "dvec")]
    pub u_max: DVector<f64>,
    #[serde(with = "dvec")]
    pub du_min: DVector<f64>,
    #[serde(with = "dvec")]
    pub du_max: DVector<f64>,
    #[serde(with = "dvec_list")]
    pub refs: Vec<DVector<f64>>,
    pub model: ArxModel,
    pub history: ArxHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMpcProblem", into = "RawMpcProblem")]
pub struct MpcProblem {
    settings: MpcSettings,
    refs: Vec<DVector<f64>>,
    model: ArxModel,
    history: ArxHistory,
}

pub fn problem_validate(raw: RawMpcProblem) -> Result<MpcProblem> {
    let settings = MpcSettings {
        horizon: raw.horizon,
        w_y: raw.w_y,
        w_du: raw.w_du,
        y_min: raw.y_min,
        y_max: raw.y_max,
        u_min: raw.u_min,
        u_max: raw.u_max,
        du_min: raw.du_min,
        du_max: raw.du_max,
    };
    MpcProblem::new(settings, raw.model, raw.history, raw.refs)
}

impl TryFrom<RawMpcProblem> for MpcProblem {
    type Error = Error;

    fn try_from(raw: RawMpcProblem) -> Result<Self> {
        problem_validate(raw)
    }
}

impl From<MpcProblem> for RawMpcProblem {
    fn from(p: MpcProblem) -> Self {
        let s = p.settings;
        RawMpcProblem {
            horizon: s.horizon,
            w_y: s.w_y,
            w_du: s.w_du,
            y_min: s.y_min,
            y_max: s.y_max,
            u_min: s.u_min,
            u_max: s.u_max,
            du_min: s.du_min,
            du_max: s.du_max,
            refs: p.refs,
            model: p.model,
            history: p.history,
        }
    }
}

impl MpcProblem {
    pub fn new(
        settings: MpcSettings,
        model: ArxModel,
        history: ArxHistory,
        refs: Vec<DVector<f64>>,
    ) -> Result<Self> {
        settings.validate()?;
        if settings.n_y() != model.n_y() {
            return Err(mismatch("w_y (n_y)", model.n_y(), settings.n_y()));
        }
        if settings.n_u() != model.n_u() {
            return Err(mismatch("w_du (n_u)", model.n_u(), settings.n_u()));
        }
        history.check(&model)?;
        if refs.len() != settings.horizon {
            return Err(Error::LengthMismatch {
                what: "refs".into(),
                expected: settings.horizon,
                actual: refs.len(),
            });
        }
        for (t, r) in refs.iter().enumerate() {
            if r.len() != model.n_y() {
                return Err(mismatch(format!("refs[{t}]"), model.n_y(), r.len()));
            }
            if let Some(index) = r.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteEntry {
                    what: format!("refs[{t}]"),
                    index,
                });
            }
        }
        Ok(Self {
            settings,
            refs,
            model,
            history,
        })
    }

    pub fn settings(&self) -> &MpcSettings {
        &self.settings
    }

    pub fn model(&self) -> &ArxModel {
        &self.model
    }

    pub fn history(&self) -> &ArxHistory {
        &self.history
    }

    /// `refs()[k]` is `r_(k+1)`.
    pub fn refs(&self) -> &[DVector<f64>] {
        &self.refs
    }

    pub fn horizon(&self) -> usize {
        self.settings.horizon
    }

    pub fn n_y(&self) -> usize {
        self.model.n_y()
    }

    pub fn n_u(&self) -> usize {
        self.model.n_u()
    }

    /// Number of decision variables `T (n_y + 2 n_u)`.
    pub fn n_z(&self) -> usize {
        self.horizon() * (self.n_y() + 2 * self.n_u())
    }

    /// `y_s` for `s <= T`, read from the history when `s <= 0`.
    #[inline]
    pub fn output_at<'a>(&'a self, z: &'a PrimalPoint, s: isize) -> &'a DVector<f64> {
        if s >= 1 {
            &z.y[(s - 1) as usize]
        } else {
            &self.history.past_y[(-s) as usize]
        }
    }

    /// `u_s` for `s <= T - 1`, read from the history when `s < 0`.
    #[inline]
    pub fn input_at<'a>(&'a self, z: &'a PrimalPoint, s: isize) -> &'a DVector<f64> {
        if s >= 0 {
            &z.u[s as usize]
        } else {
            &self.history.past_u[(-s - 1) as usize]
        }
    }

    pub fn check_primal(&self, z: &PrimalPoint) -> Result<()> {
        let t = self.horizon();
        for (what, list, n) in [("Y", &z.y, self.n_y()), ("U", &z.u, self.n_u()), ("dU", &z.du, self.n_u())] {
            if list.len() != t {
                return Err(Error::LengthMismatch {
                    what: what.into(),
                    expected: t,
                    actual: list.len(),
                });
            }
            for (k, v) in list.iter().enumerate() {
                if v.len() != n {
                    return Err(mismatch(format!("{what}[{k}]"), n, v.len()));
                }
            }
        }
        Ok(())
    }

    pub fn check_dual(&self, d: &DualPoint) -> Result<()> {
        let t = self.horizon();
        for (what, list, n) in [("Lambda", &d.lambda, self.n_y()), ("Gamma", &d.gamma, self.n_u())] {
            if list.len() != t {
                return Err(Error::LengthMismatch {
                    what: what.into(),
                    expected: t,
                    actual: list.len(),
                });
            }
            for (k, v) in list.iter().enumerate() {
                if v.len() != n {
                    return Err(mismatch(format!("{what}[{k}]"), n, v.len()));
                }
            }
        }
        Ok(())
    }

    /// Whether every block of `z` lies in its box (no tolerance).
    pub fn in_bounds(&self, z: &PrimalPoint) -> bool {
        let s = &self.settings;
        let inside = |v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>| {
            v.iter().zip(lo.iter().zip(hi.iter())).all(|(x, (l, h))| l <= x && x <= h)
        };
        z.y.iter().all(|v| inside(v, &s.y_min, &s.y_max))
            && z.u.iter().all(|v| inside(v, &s.u_min, &s.u_max))
            && z.du.iter().all(|v| inside(v, &s.du_min, &s.du_max))
    }

    /// Trajectory consistent with both equality families for the given inputs
    /// `u_0 .. u_(T-1)`.
    pub fn simulate(&self, inputs: &[DVector<f64>]) -> Result<PrimalPoint> {
        let t_len = self.horizon();
        if inputs.len() != t_len {
            return Err(Error::LengthMismatch {
                what: "inputs".into(),
                expected: t_len,
                actual: inputs.len(),
            });
        }
        let mut z = PrimalPoint::zeros(t_len, self.n_y(), self.n_u());
        z.u = inputs.to_vec();
        for t in 1..=t_len as isize {
            let mut y = DVector::zeros(self.n_y());
            for (i, a) in self.model.a().iter().enumerate() {
                y.gemv(1.0, a, self.output_at(&z, t - 1 - i as isize), 1.0);
            }
            for (i, b) in self.model.b().iter().enumerate() {
                y.gemv(1.0, b, self.input_at(&z, t - 1 - i as isize), 1.0);
            }
            z.y[(t - 1) as usize] = y;
            z.du[(t - 1) as usize] = self.input_at(&z, t - 1) - self.input_at(&z, t - 2);
        }
        Ok(z)
    }

    /// Tracking cost `1/2 sum |y_t - r_t|^2_Wy + |du_(t-1)|^2_Wdu`.
    pub fn tracking_cost(&self, z: &PrimalPoint) -> f64 {
        let s = &self.settings;
        let mut cost = 0.0;
        for (y, r) in z.y.iter().zip(&self.refs) {
            for i in 0..y.len() {
                let e = y[i] - r[i];
                cost += s.w_y[i] * e * e;
            }
        }
        for du in &z.du {
            for i in 0..du.len() {
                cost += s.w_du[i] * du[i] * du[i];
            }
        }
        0.5 * cost
    }

    pub fn with_refs(&self, refs: Vec<DVector<f64>>) -> Result<Self> {
        Self::new(self.settings.clone(), self.model.clone(), self.history.clone(), refs)
    }
}

/// `z = (Y, U, dU)` with `y[k] = y_(k+1)`, `u[k] = u_k`, `du[k] = du_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalPoint {
    #[serde(with = "dvec_list")]
    pub y: Vec<DVector<f64>>,
    #[serde(with = "dvec_list")]
    pub u: Vec<DVector<f64>>,
    #[serde(with = "dvec_list")]
    pub du: Vec<DVector<f64>>,
}

impl PrimalPoint {
    pub fn zeros(horizon: usize, n_y: usize, n_u: usize) -> Self {
        Self {
            y: vec![DVector::zeros(n_y); horizon],
            u: vec![DVector::zeros(n_u); horizon],
            du: vec![DVector::zeros(n_u); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.y.len()
    }

    /// Flattens in the interleaved order `[y_1, u_0, du_0, .., y_T, u_(T-1), du_(T-1)]`.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::new();
        for k in 0..self.horizon() {
            out.extend(self.y[k].iter());
            out.extend(self.u[k].iter());
            out.extend(self.du[k].iter());
        }
        DVector::from_vec(out)
    }

    pub fn from_flat(horizon: usize, n_y: usize, n_u: usize, flat: &[f64]) -> Result<Self> {
        let block = n_y + 2 * n_u;
        if flat.len() != horizon * block {
            return Err(mismatch("flat primal vector", horizon * block, flat.len()));
        }
        let mut z = Self::zeros(horizon, n_y, n_u);
        for (k, chunk) in flat.chunks(block).enumerate() {
            z.y[k] = DVector::from_row_slice(&chunk[..n_y]);
            z.u[k] = DVector::from_row_slice(&chunk[n_y..n_y + n_u]);
            z.du[k] = DVector::from_row_slice(&chunk[n_y + n_u..]);
        }
        Ok(z)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs_diff_lists(&self.y, &other.y)
            .max(max_abs_diff_lists(&self.u, &other.u))
            .max(max_abs_diff_lists(&self.du, &other.du))
    }
}

/// Scaled duals, `lambda[k] = lambda_(k+1)` and `gamma[k] = gamma_(k+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    #[serde(with = "dvec_list")]
    pub lambda: Vec<DVector<f64>>,
    #[serde(with = "dvec_list")]
    pub gamma: Vec<DVector<f64>>,
}

impl DualPoint {
    pub fn zeros(horizon: usize, n_y: usize, n_u: usize) -> Self {
        Self {
            lambda: vec![DVector::zeros(n_y); horizon],
            gamma: vec![DVector::zeros(n_u); horizon],
        }
    }
}

pub(crate) fn max_abs_diff_lists(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max)
}

pub(crate) fn sq_norm_lists(a: &[DVector<f64>]) -> f64 {
    a.iter().map(|v| v.norm_squared()).sum()
}

/// Equality residuals: `arx[k]` belongs to `t = k + 1` and is
/// `sum_i A(i) y_(t-i) + sum_i B(i) u_(t-i) - y_t`; `du[k]` is
/// `u_(t-2) + du_(t-1) - u_(t-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub arx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
}

impl Residuals {
    pub fn sq_norm(&self) -> f64 {
        sq_norm_lists(&self.arx) + sq_norm_lists(&self.du)
    }

    pub fn max_abs(&self) -> f64 {
        self.arx
            .iter()
            .chain(&self.du)
            .map(|v| v.amax())
            .fold(0.0, f64::max)
    }
}

/// ARX residual for step `t` (1-based).
pub(crate) fn arx_residual(p: &MpcProblem, z: &PrimalPoint, t: isize) -> DVector<f64> {
    let mut r = -p.output_at(z, t);
    for (i, a) in p.model().a().iter().enumerate() {
        r.gemv(1.0, a, p.output_at(z, t - 1 - i as isize), 1.0);
    }
    for (i, b) in p.model().b().iter().enumerate() {
        r.gemv(1.0, b, p.input_at(z, t - 1 - i as isize), 1.0);
    }
    r
}

/// Increment residual for step `t` (1-based).
pub(crate) fn du_residual(p: &MpcProblem, z: &PrimalPoint, t: isize) -> DVector<f64> {
    p.input_at(z, t - 2) + &z.du[(t - 1) as usize] - p.input_at(z, t - 1)
}

pub fn residuals(p: &MpcProblem, z: &PrimalPoint) -> Result<Residuals> {
    p.check_primal(z)?;
    let t_len = p.horizon() as isize;
    Ok(Residuals {
        arx: (1..=t_len).map(|t| arx_residual(p, z, t)).collect(),
        du: (1..=t_len).map(|t| du_residual(p, z, t)).collect(),
    })
}

/// Augmented Lagrangian with scaled duals:
/// `f(z) + rho sum (lambda'res + gamma'res) + rho/2 sum |res|^2`.
pub fn al_objective(p: &MpcProblem, z: &PrimalPoint, d: &DualPoint, rho: f64) -> Result<f64> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::NonPositiveRho(rho));
    }
    p.check_dual(d)?;
    let res = residuals(p, z)?;
    let mut lin = 0.0;
    for (l, r) in d.lambda.iter().zip(&res.arx) {
        lin += l.dot(r);
    }
    for (g, r) in d.gamma.iter().zip(&res.du) {
        lin += g.dot(r);
    }
    Ok(p.tracking_cost(z) + rho * lin + 0.5 * rho * res.sq_norm())
}
