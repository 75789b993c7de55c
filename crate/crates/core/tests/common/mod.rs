#![allow(dead_code)]

use cdal_arx::{ArxHistory, ArxModel, MpcProblem, MpcSettings};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct Dims {
    pub n_y: usize,
    pub n_u: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub horizon: usize,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dims(r: &mut ChaCha8Rng) -> Dims {
    Dims {
        n_y: r.gen_range(1..=3),
        n_u: r.gen_range(1..=3),
        n_a: r.gen_range(1..=4),
        n_b: r.gen_range(1..=4),
        horizon: r.gen_range(1..=10),
    }
}

/// Dimensions with at most 9 decision variables.
pub fn tiny_dims(r: &mut ChaCha8Rng) -> Dims {
    let options = [(1, 1, 1), (1, 1, 2), (1, 1, 3), (2, 1, 1), (2, 1, 2), (1, 2, 1), (3, 1, 1), (3, 2, 1)];
    let (n_y, n_u, horizon) = options[r.gen_range(0..options.len())];
    Dims {
        n_y,
        n_u,
        n_a: r.gen_range(1..=3),
        n_b: r.gen_range(1..=3),
        horizon,
    }
}

fn mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.gen_range(-scale..=scale))
}

fn vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.gen_range(lo..=hi))
}

pub fn random_model(r: &mut ChaCha8Rng, d: Dims) -> ArxModel {
    let a = (0..d.n_a).map(|_| mat(r, d.n_y, d.n_y, 0.5 / d.n_a as f64)).collect();
    let b = (0..d.n_b).map(|_| mat(r, d.n_y, d.n_u, 1.0)).collect();
    ArxModel::new(a, b).unwrap()
}

pub fn random_history(r: &mut ChaCha8Rng, d: Dims, scale: f64) -> ArxHistory {
    let mut h = ArxHistory::zeros(d.n_y, d.n_u, d.n_a, d.n_b);
    for y in h.past_y.iter_mut() {
        *y = vec(r, d.n_y, -scale, scale);
    }
    for u in h.past_u.iter_mut() {
        *u = vec(r, d.n_u, -scale, scale);
    }
    h
}

/// Arbitrary boxes and data; the problem may be infeasible, which the
/// coordinate-descent pass does not care about.
pub fn random_problem(seed: u64) -> MpcProblem {
    let mut r = rng(seed);
    let d = random_dims(&mut r);
    let model = random_model(&mut r, d);
    let hist = random_history(&mut r, d, 1.0);
    let mut s = MpcSettings::benchmark(d.horizon, d.n_y, d.n_u);
    s.w_y = vec(&mut r, d.n_y, 0.1, 2.0);
    s.w_du = vec(&mut r, d.n_u, 0.01, 1.0);
    for i in 0..d.n_y {
        s.y_min[i] = r.gen_range(-2.0..-0.1);
        s.y_max[i] = r.gen_range(0.1..2.0);
    }
    for i in 0..d.n_u {
        s.u_min[i] = r.gen_range(-2.0..-0.1);
        s.u_max[i] = r.gen_range(0.1..2.0);
        s.du_min[i] = r.gen_range(-1.0..-0.05);
        s.du_max[i] = r.gen_range(0.05..1.0);
    }
    let refs = (0..d.horizon).map(|_| vec(&mut r, d.n_y, -1.0, 1.0)).collect();
    MpcProblem::new(s, model, hist, refs).unwrap()
}

/// Feasible by construction: a random admissible input sequence is simulated
/// and the output box is placed around the resulting trajectory.
pub fn feasible_problem(seed: u64, tiny: bool) -> MpcProblem {
    let mut r = rng(seed);
    let d = if tiny { tiny_dims(&mut r) } else { random_dims(&mut r) };
    let model = random_model(&mut r, d);
    let mut hist = random_history(&mut r, d, 0.5);
    let mut s = MpcSettings::benchmark(d.horizon, d.n_y, d.n_u);
    s.w_y = vec(&mut r, d.n_y, 0.1, 2.0);
    s.w_du = vec(&mut r, d.n_u, 0.01, 1.0);
    for i in 0..d.n_u {
        s.u_min[i] = -1.0;
        s.u_max[i] = 1.0;
        s.du_min[i] = r.gen_range(-1.0..-0.2);
        s.du_max[i] = r.gen_range(0.2..1.0);
        hist.past_u[0][i] = hist.past_u[0][i].clamp(-0.5, 0.5);
    }
    let mut prev = hist.past_u[0].clone();
    let inputs: Vec<DVector<f64>> = (0..d.horizon)
        .map(|_| {
            let u = DVector::from_fn(d.n_u, |i, _| {
                let lo = s.u_min[i].max(prev[i] + 0.5 * s.du_min[i]);
                let hi = s.u_max[i].min(prev[i] + 0.5 * s.du_max[i]);
                r.gen_range(lo..=hi)
            });
            prev = u.clone();
            u
        })
        .collect();
    let refs = (0..d.horizon).map(|_| vec(&mut r, d.n_y, -1.0, 1.0)).collect::<Vec<_>>();
    let probe = MpcProblem::new(s.clone(), model.clone(), hist.clone(), refs.clone()).unwrap();
    let traj = probe.simulate(&inputs).unwrap();
    for i in 0..d.n_y {
        let lo = traj.y.iter().map(|y| y[i]).fold(f64::INFINITY, f64::min);
        let hi = traj.y.iter().map(|y| y[i]).fold(f64::NEG_INFINITY, f64::max);
        s.y_min[i] = lo - r.gen_range(0.05..0.5);
        s.y_max[i] = hi + r.gen_range(0.05..0.5);
    }
    MpcProblem::new(s, model, hist, refs).unwrap()
}
