//! MIMO ARX models and the two model generators used by the closed-loop
//! experiments: a sinusoidally time-varying 2x2 model and an LPV model whose
//! coefficients are produced by ReLU networks of a scheduling vector.
//!
//! An ARX model of orders `(n_a, n_b)` predicts
//!
//! ```text
//! y_t = sum_{i=1..n_a} A(i) y_{t-i} + sum_{i=1..n_b} B(i) u_{t-i}
//! ```
//!
//! Lag-indexed lists (`a`, `b`, histories) are stored newest-first: element
//! `0` belongs to lag 1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::serde_util::{dvec_list, row_major};

/// JSON form of an [`ArxModel`]. Matrices are row-major, lag 1 first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawArxModel {
    pub n_y: usize,
    pub n_u: usize,
    pub n_a: usize,
    pub n_b: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArxModel", into = "RawArxModel")]
pub struct ArxModel {
    n_y: usize,
    n_u: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
}

fn check_finite(what: &str, data: &[f64]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFiniteEntry {
            what: what.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

/// Validates a raw model description and converts it into an [`ArxModel`].
pub fn arx_validate(raw: RawArxModel) -> Result<ArxModel> {
    if raw.n_a == 0 {
        return Err(mismatch("n_a", ">= 1", 0));
    }
    if raw.n_b == 0 {
        return Err(mismatch("n_b", ">= 1", 0));
    }
    if raw.n_y == 0 || raw.n_u == 0 {
        return Err(mismatch("n_y/n_u", ">= 1", 0));
    }
    if raw.a.len() != raw.n_a {
        return Err(mismatch("A (lag count)", raw.n_a, raw.a.len()));
    }
    if raw.b.len() != raw.n_b {
        return Err(mismatch("B (lag count)", raw.n_b, raw.b.len()));
    }
    let mut a = Vec::with_capacity(raw.n_a);
    for (k, flat) in raw.a.iter().enumerate() {
        let what = format!("A({})", k + 1);
        if flat.len() != raw.n_y * raw.n_y {
            return Err(mismatch(what, raw.n_y * raw.n_y, flat.len()));
        }
        check_finite(&what, flat)?;
        a.push(DMatrix::from_row_slice(raw.n_y, raw.n_y, flat));
    }
    let mut b = Vec::with_capacity(raw.n_b);
    for (k, flat) in raw.b.iter().enumerate() {
        let what = format!("B({})", k + 1);
        if flat.len() != raw.n_y * raw.n_u {
            return Err(mismatch(what, raw.n_y * raw.n_u, flat.len()));
        }
        check_finite(&what, flat)?;
        b.push(DMatrix::from_row_slice(raw.n_y, raw.n_u, flat));
    }
    Ok(ArxModel {
        n_y: raw.n_y,
        n_u: raw.n_u,
        a,
        b,
    })
}

impl TryFrom<RawArxModel> for ArxModel {
    type Error = Error;

    fn try_from(raw: RawArxModel) -> Result<Self> {
        arx_validate(raw)
    }
}

impl From<ArxModel> for RawArxModel {
    fn from(m: ArxModel) -> Self {
        RawArxModel {
            n_y: m.n_y,
            n_u: m.n_u,
            n_a: m.a.len(),
            n_b: m.b.len(),
            a: m.a.iter().map(row_major).collect(),
            b: m.b.iter().map(row_major).collect(),
        }
    }
}

impl ArxModel {
    /// Builds a model from lag matrices, inferring `n_y` and `n_u` from `B(1)`.
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        let b1 = b.first().ok_or_else(|| mismatch("n_b", ">= 1", 0))?;
        let (n_y, n_u) = b1.shape();
        if a.is_empty() {
            return Err(mismatch("n_a", ">= 1", 0));
        }
        for (k, m) in a.iter().enumerate() {
            if m.shape() != (n_y, n_y) {
                return Err(mismatch(
                    format!("A({})", k + 1),
                    format!("{n_y}x{n_y}"),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
            check_finite(&format!("A({})", k + 1), m.as_slice())?;
        }
        for (k, m) in b.iter().enumerate() {
            if m.shape() != (n_y, n_u) {
                return Err(mismatch(
                    format!("B({})", k + 1),
                    format!("{n_y}x{n_u}"),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
            check_finite(&format!("B({})", k + 1), m.as_slice())?;
        }
        if n_y == 0 || n_u == 0 {
            return Err(mismatch("n_y/n_u", ">= 1", 0));
        }
        Ok(Self { n_y, n_u, a, b })
    }

    pub fn zeros(n_y: usize, n_u: usize, n_a: usize, n_b: usize) -> Result<Self> {
        Self::new(
            vec![DMatrix::zeros(n_y, n_y); n_a],
            vec![DMatrix::zeros(n_y, n_u); n_b],
        )
    }

    /// The nominal 2x2, order (4, 4) model that the time-varying benchmark
    /// perturbs.
    pub fn time_varying_base() -> Self {
        let sym = |d: f64, o: f64| DMatrix::from_row_slice(2, 2, &[d, o, o, d]);
        let a = vec![sym(0.9, 0.1), sym(0.7, 0.1), sym(0.5, 0.1), sym(0.3, 0.1)];
        let b = vec![sym(1.0, 0.5), sym(0.8, 0.4), sym(0.6, 0.3), sym(0.4, 0.2)];
        Self::new(a, b).expect("constant model is well formed")
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_a(&self) -> usize {
        self.a.len()
    }

    pub fn n_b(&self) -> usize {
        self.b.len()
    }

    /// Output lag matrices, `a()[k]` is `A(k+1)`.
    pub fn a(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    /// Input lag matrices, `b()[k]` is `B(k+1)`.
    pub fn b(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    /// One-step prediction from the `n_a` most recent outputs and `n_b` most
    /// recent inputs, both newest-first.
    pub fn step(&self, outputs: &[DVector<f64>], inputs: &[DVector<f64>]) -> Result<DVector<f64>> {
        if outputs.len() != self.n_a() {
            return Err(mismatch("output window", self.n_a(), outputs.len()));
        }
        if inputs.len() != self.n_b() {
            return Err(mismatch("input window", self.n_b(), inputs.len()));
        }
        let mut y = DVector::zeros(self.n_y);
        for (k, (a, yk)) in self.a.iter().zip(outputs).enumerate() {
            if yk.len() != self.n_y {
                return Err(mismatch(format!("y_(t-{})", k + 1), self.n_y, yk.len()));
            }
            y.gemv(1.0, a, yk, 1.0);
        }
        for (k, (b, uk)) in self.b.iter().zip(inputs).enumerate() {
            if uk.len() != self.n_u {
                return Err(mismatch(format!("u_(t-{})", k + 1), self.n_u, uk.len()));
            }
            y.gemv(1.0, b, uk, 1.0);
        }
        Ok(y)
    }

    /// Pads the model to larger orders by repeating the last lag matrix.
    pub fn extend_repeating_last(&self, n_a: usize, n_b: usize) -> Result<Self> {
        if n_a < self.n_a() || n_b < self.n_b() {
            return Err(Error::InvalidConfig(format!(
                "cannot shrink model orders ({}, {}) to ({n_a}, {n_b})",
                self.n_a(),
                self.n_b()
            )));
        }
        let mut a = self.a.clone();
        let mut b = self.b.clone();
        let (last_a, last_b) = (a[a.len() - 1].clone(), b[b.len() - 1].clone());
        a.resize(n_a, last_a);
        b.resize(n_b, last_b);
        Self::new(a, b)
    }

    /// Row `r` of the stacked matrix `[A(1) .. A(n_a) B(1) .. B(n_b)]`.
    pub fn stacked_row(&self, r: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.n_y * self.n_a() + self.n_u * self.n_b());
        for a in &self.a {
            row.extend(a.row(r).iter());
        }
        for b in &self.b {
            row.extend(b.row(r).iter());
        }
        row
    }
}

/// Past data feeding a prediction: `past_y = [y_0, y_-1, .., y_(1-n_a)]` and
/// `past_u = [u_-1, u_-2, .., u_(1-n_b)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArxHistory {
    #[serde(with = "dvec_list")]
    pub past_y: Vec<DVector<f64>>,
    #[serde(with = "dvec_list")]
    pub past_u: Vec<DVector<f64>>,
}

impl ArxHistory {
    pub fn zeros(n_y: usize, n_u: usize, n_a: usize, n_b: usize) -> Self {
        Self {
            past_y: vec![DVector::zeros(n_y); n_a],
            past_u: vec![DVector::zeros(n_u); n_b],
        }
    }

    pub fn zeros_for(model: &ArxModel) -> Self {
        Self::zeros(model.n_y(), model.n_u(), model.n_a(), model.n_b())
    }

    pub fn check(&self, model: &ArxModel) -> Result<()> {
        if self.past_y.len() != model.n_a() {
            return Err(Error::LengthMismatch {
                what: "history.past_y".into(),
                expected: model.n_a(),
                actual: self.past_y.len(),
            });
        }
        if self.past_u.len() != model.n_b() {
            return Err(Error::LengthMismatch {
                what: "history.past_u".into(),
                expected: model.n_b(),
                actual: self.past_u.len(),
            });
        }
        for (k, y) in self.past_y.iter().enumerate() {
            if y.len() != model.n_y() {
                return Err(mismatch(format!("history.past_y[{k}]"), model.n_y(), y.len()));
            }
            check_finite(&format!("history.past_y[{k}]"), y.as_slice())?;
        }
        for (k, u) in self.past_u.iter().enumerate() {
            if u.len() != model.n_u() {
                return Err(mismatch(format!("history.past_u[{k}]"), model.n_u(), u.len()));
            }
            check_finite(&format!("history.past_u[{k}]"), u.as_slice())?;
        }
        Ok(())
    }

    /// Shifts the window after `u_applied` was applied and `y_new` observed.
    pub fn advance(&mut self, y_new: DVector<f64>, u_applied: DVector<f64>) {
        self.past_y.pop();
        self.past_y.insert(0, y_new);
        self.past_u.pop();
        self.past_u.insert(0, u_applied);
    }

    /// Resizes the window to new orders, zero-padding older entries.
    pub fn resized(&self, n_a: usize, n_b: usize) -> Self {
        let n_y = self.past_y.first().map_or(0, |v| v.len());
        let n_u = self.past_u.first().map_or(0, |v| v.len());
        let mut h = self.clone();
        h.past_y.resize(n_a, DVector::zeros(n_y));
        h.past_u.resize(n_b, DVector::zeros(n_u));
        h
    }
}

/// Sinusoidal perturbation of a 2x2 base model:
/// `A(i)^t = A(i) + g M^t`, `B(i)^t = B(i) + g M^t` with
/// `M^t = [[sin(t/d), cos(t/d)], [cos(t/d), sin(t/d)]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeVaryingArxSpec {
    pub base: ArxModel,
    pub perturbation_gain: f64,
    pub period_divisor: f64,
}

impl TimeVaryingArxSpec {
    pub fn new(base: ArxModel, perturbation_gain: f64, period_divisor: f64) -> Result<Self> {
        if base.n_y() != 2 || base.n_u() != 2 {
            return Err(Error::UnsupportedShape(format!(
                "time-varying generator needs n_y = n_u = 2, got n_y = {}, n_u = {}",
                base.n_y(),
                base.n_u()
            )));
        }
        if !perturbation_gain.is_finite() || !period_divisor.is_finite() || period_divisor == 0.0 {
            return Err(Error::InvalidConfig(
                "perturbation_gain must be finite and period_divisor finite and nonzero".into(),
            ));
        }
        Ok(Self {
            base,
            perturbation_gain,
            period_divisor,
        })
    }

    /// The benchmark instance: gain 0.1, divisor 10.
    pub fn benchmark() -> Self {
        Self::new(ArxModel::time_varying_base(), 0.1, 10.0).expect("benchmark is 2x2")
    }

    pub fn perturbation(&self, t: u64) -> DMatrix<f64> {
        let arg = t as f64 / self.period_divisor;
        let (s, c) = arg.sin_cos();
        DMatrix::from_row_slice(2, 2, &[s, c, c, s])
    }

    /// Model in effect at step `t`.
    pub fn at(&self, t: u64) -> Result<ArxModel> {
        if self.base.n_y() != 2 || self.base.n_u() != 2 {
            return Err(Error::UnsupportedShape(format!(
                "n_y = {}, n_u = {}",
                self.base.n_y(),
                self.base.n_u()
            )));
        }
        let dm = self.perturbation(t) * self.perturbation_gain;
        let a = self.base.a().iter().map(|a| a + &dm).collect();
        let b = self.base.b().iter().map(|b| b + &dm).collect();
        ArxModel::new(a, b)
    }
}

pub fn tv_arx_at(spec: &TimeVaryingArxSpec, t: u64) -> Result<ArxModel> {
    spec.at(t)
}

/// One affine layer `W v + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawLayer {
    #[serde(rename = "W")]
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawReluNetwork {
    layers: Vec<RawLayer>,
}

/// Feedforward network: ReLU after every layer except the last, which is
/// affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawReluNetwork", into = "RawReluNetwork")]
pub struct ReluNetwork {
    layers: Vec<DenseLayer>,
}

impl TryFrom<RawReluNetwork> for ReluNetwork {
    type Error = Error;

    fn try_from(raw: RawReluNetwork) -> Result<Self> {
        let mut layers = Vec::with_capacity(raw.layers.len());
        for (l, layer) in raw.layers.into_iter().enumerate() {
            let rows = layer.b.len();
            if rows == 0 || layer.w.len() % rows != 0 {
                return Err(mismatch(
                    format!("layers[{l}].W"),
                    format!("a multiple of len(b) = {rows}"),
                    layer.w.len(),
                ));
            }
            let cols = layer.w.len() / rows;
            layers.push(DenseLayer {
                weight: DMatrix::from_row_slice(rows, cols, &layer.w),
                bias: DVector::from_vec(layer.b),
            });
        }
        ReluNetwork::new(layers)
    }
}

impl From<ReluNetwork> for RawReluNetwork {
    fn from(n: ReluNetwork) -> Self {
        RawReluNetwork {
            layers: n
                .layers
                .iter()
                .map(|l| RawLayer {
                    w: row_major(&l.weight),
                    b: l.bias.as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

impl ReluNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(mismatch("layers", ">= 1", 0));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weight.nrows() != layer.bias.len() {
                return Err(mismatch(
                    format!("layers[{l}] bias"),
                    layer.weight.nrows(),
                    layer.bias.len(),
                ));
            }
            if l > 0 && layer.weight.ncols() != layers[l - 1].weight.nrows() {
                return Err(mismatch(
                    format!("layers[{l}] input width"),
                    layers[l - 1].weight.nrows(),
                    layer.weight.ncols(),
                ));
            }
            check_finite(&format!("layers[{l}].W"), layer.weight.as_slice())?;
            check_finite(&format!("layers[{l}].b"), layer.bias.as_slice())?;
        }
        Ok(Self { layers })
    }

    /// Random network with the given layer widths `[input, hidden.., output]`
    /// and every weight and bias drawn uniformly from `[lo, hi)`.
    pub fn random<R: Rng>(widths: &[usize], lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidConfig("a network needs at least two widths".into()));
        }
        if !(lo <= hi) {
            return Err(Error::InvalidConfig(format!("empty weight range [{lo}, {hi}]")));
        }
        let mut draw = || if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let layers = widths
            .windows(2)
            .map(|w| {
                let weight = DMatrix::from_fn(w[1], w[0], |_, _| draw());
                let bias = DVector::from_fn(w[1], |_, _| draw());
                DenseLayer { weight, bias }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].bias.len()
    }

    pub fn eval(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.input_dim() {
            return Err(mismatch("network input", self.input_dim(), w.len()));
        }
        let last = self.layers.len() - 1;
        let mut v = w.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = layer.bias.clone();
            next.gemv(1.0, &layer.weight, &v, 1.0);
            if l < last {
                next.apply(|x| *x = x.max(0.0));
            }
            v = next;
        }
        Ok(v)
    }
}

pub fn relu_net_eval(net: &ReluNetwork, w: &DVector<f64>) -> Result<DVector<f64>> {
    net.eval(w)
}

/// Quasi-LPV ARX model: row `r` of `[A(1) .. A(n_a) B(1) .. B(n_b)]` is the
/// output of `nets[r]` evaluated at the scheduling vector
/// `w = [y_(t-1); ..; y_(t-n_a); u_(t-2); ..; u_(t-n_b)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpvArxSpec {
    pub n_y: usize,
    pub n_u: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub nets: Vec<ReluNetwork>,
}

impl LpvArxSpec {
    pub fn new(n_y: usize, n_u: usize, n_a: usize, n_b: usize, nets: Vec<ReluNetwork>) -> Result<Self> {
        let spec = Self {
            n_y,
            n_u,
            n_a,
            n_b,
            nets,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_a == 0 || self.n_b == 0 || self.n_y == 0 || self.n_u == 0 {
            return Err(mismatch("LPV orders and dimensions", ">= 1", 0));
        }
        if self.nets.len() != self.n_y {
            return Err(mismatch("nets", self.n_y, self.nets.len()));
        }
        for (r, net) in self.nets.iter().enumerate() {
            if net.input_dim() != self.scheduling_dim() {
                return Err(mismatch(
                    format!("nets[{r}] input"),
                    self.scheduling_dim(),
                    net.input_dim(),
                ));
            }
            if net.output_dim() != self.coefficient_dim() {
                return Err(mismatch(
                    format!("nets[{r}] output"),
                    self.coefficient_dim(),
                    net.output_dim(),
                ));
            }
        }
        Ok(())
    }

    pub fn scheduling_dim(&self) -> usize {
        self.n_y * self.n_a + self.n_u * (self.n_b - 1)
    }

    pub fn coefficient_dim(&self) -> usize {
        self.n_y * self.n_a + self.n_u * self.n_b
    }

    /// Networks with hidden widths `hidden_factor * scheduling_dim` (two hidden
    /// layers), random weights and hidden biases uniform in `[lo, hi)`, and
    /// output biases equal to the stacked rows of `bias_model`.
    pub fn random_around<R: Rng>(
        bias_model: &ArxModel,
        hidden_factor: usize,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (n_y, n_u, n_a, n_b) = (
            bias_model.n_y(),
            bias_model.n_u(),
            bias_model.n_a(),
            bias_model.n_b(),
        );
        if n_b < 1 {
            return Err(mismatch("n_b", ">= 1", n_b));
        }
        let input = n_y * n_a + n_u * (n_b - 1);
        let output = n_y * n_a + n_u * n_b;
        let hidden = hidden_factor * input;
        let mut nets = Vec::with_capacity(n_y);
        for r in 0..n_y {
            let mut net = ReluNetwork::random(&[input, hidden, hidden, output], lo, hi, rng)?;
            let last = net.layers.len() - 1;
            net.layers[last].bias = DVector::from_vec(bias_model.stacked_row(r));
            nets.push(net);
        }
        Self::new(n_y, n_u, n_a, n_b, nets)
    }

    /// Scheduling vector from a history window (`past_y` holds the `n_a` newest
    /// outputs, `past_u` the `n_b` newest inputs).
    pub fn scheduling_vector(&self, history: &ArxHistory) -> Result<DVector<f64>> {
        if history.past_y.len() != self.n_a || history.past_u.len() != self.n_b {
            return Err(mismatch(
                "history window",
                format!("({}, {})", self.n_a, self.n_b),
                format!("({}, {})", history.past_y.len(), history.past_u.len()),
            ));
        }
        let mut w = Vec::with_capacity(self.scheduling_dim());
        for y in &history.past_y {
            w.extend(y.iter());
        }
        for u in &history.past_u[..self.n_b - 1] {
            w.extend(u.iter());
        }
        if w.len() != self.scheduling_dim() {
            return Err(mismatch("scheduling vector", self.scheduling_dim(), w.len()));
        }
        Ok(DVector::from_vec(w))
    }

    pub fn at(&self, w: &DVector<f64>) -> Result<ArxModel> {
        if w.len() != self.scheduling_dim() {
            return Err(mismatch("scheduling vector", self.scheduling_dim(), w.len()));
        }
        let mut a = vec![DMatrix::zeros(self.n_y, self.n_y); self.n_a];
        let mut b = vec![DMatrix::zeros(self.n_y, self.n_u); self.n_b];
        for (r, net) in self.nets.iter().enumerate() {
            let row = net.eval(w)?;
            let mut it = row.iter().copied();
            for m in a.iter_mut().chain(b.iter_mut()) {
                for c in 0..m.ncols() {
                    m[(r, c)] = it.next().expect("coefficient_dim checked");
                }
            }
        }
        ArxModel::new(a, b)
    }
}

pub fn lpv_arx_at(spec: &LpvArxSpec, w: &DVector<f64>) -> Result<ArxModel> {
    spec.at(w)
}
