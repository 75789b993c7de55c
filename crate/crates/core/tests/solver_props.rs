mod common;

use cdal_arx::problem::{al_objective, residuals};
use cdal_arx::qp::{build_sparse_qp, reference_solve};
use cdal_arx::solver::{accelerate, cd_pass_coupled, cd_pass_naive, next_alpha, solve_from_state, BlockHessians, DiagCache, SolverState};
use cdal_arx::{solve, DualPoint, Error, MpcProblem, PrimalPoint, SolverConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_state(p: &MpcProblem, seed: u64) -> SolverState {
    let mut r = common::rng(seed ^ 0x5eed);
    let s = p.settings();
    let mut z = PrimalPoint::zeros(p.horizon(), p.n_y(), p.n_u());
    for k in 0..p.horizon() {
        z.y[k] = DVector::from_fn(p.n_y(), |i, _| r.gen_range(s.y_min[i]..=s.y_max[i]));
        z.u[k] = DVector::from_fn(p.n_u(), |i, _| r.gen_range(s.u_min[i]..=s.u_max[i]));
        z.du[k] = DVector::from_fn(p.n_u(), |i, _| r.gen_range(s.du_min[i]..=s.du_max[i]));
    }
    let mut d = DualPoint::zeros(p.horizon(), p.n_y(), p.n_u());
    for l in d.lambda.iter_mut() {
        *l = DVector::from_fn(p.n_y(), |_, _| r.gen_range(-1.0..=1.0));
    }
    for g in d.gamma.iter_mut() {
        *g = DVector::from_fn(p.n_u(), |_, _| r.gen_range(-1.0..=1.0));
    }
    SolverState::new(p, z, d).unwrap()
}

fn invariant_gap(p: &MpcProblem, st: &SolverState) -> f64 {
    let res = residuals(p, &st.z).unwrap();
    let lam = st.lam_tilde.iter().zip(&st.lam_acc).zip(&res.arx).map(|((w, a), r)| (w - a - r).amax());
    let gam = st.gam_tilde.iter().zip(&st.gam_acc).zip(&res.du).map(|((w, a), r)| (w - a - r).amax());
    lam.chain(gam).fold(0.0, f64::max)
}

fn sq_move(a: &PrimalPoint, b: &PrimalPoint) -> f64 {
    (a.to_flat() - b.to_flat()).norm_squared()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coupled_and_naive_passes_agree(seed in any::<u64>(), rho in 0.1f64..10.0) {
        let p = common::random_problem(seed);
        let mut a = random_state(&p, seed);
        let mut b = a.clone();
        let cache = DiagCache::new(&p, rho).unwrap();
        let hess = BlockHessians::new(&p, rho).unwrap();
        for _ in 0..5 {
            let sa = cd_pass_coupled(&p, &mut a, &cache).unwrap();
            let sb = cd_pass_naive(&p, &mut b, &hess).unwrap();
            prop_assert!(a.z.max_abs_diff(&b.z) <= 1e-12);
            prop_assert!((sa - sb).abs() <= 1e-12 * (1.0 + sa.abs()));
            prop_assert!(invariant_gap(&p, &a) <= 1e-10);
        }
    }

    #[test]
    fn pass_descends_and_stays_in_box(seed in any::<u64>(), rho in 0.1f64..10.0) {
        let p = common::random_problem(seed);
        let mut st = random_state(&p, seed);
        let cache = DiagCache::new(&p, rho).unwrap();
        let duals = st.accelerated_duals();
        let mut prev = al_objective(&p, &st.z, &duals, rho).unwrap();
        for _ in 0..10 {
            let before = st.z.clone();
            let sigma = cd_pass_coupled(&p, &mut st, &cache).unwrap();
            let now = al_objective(&p, &st.z, &duals, rho).unwrap();
            prop_assert!(now <= prev + 1e-12 * (1.0 + prev.abs()), "AL rose from {prev} to {now}");
            prop_assert!(p.in_bounds(&st.z));
            let moved = sq_move(&before, &st.z);
            prop_assert!((sigma - moved).abs() <= 1e-12 * (1.0 + moved));
            prev = now;
        }
    }

    #[test]
    fn outer_loop_keeps_iterates_in_box(seed in any::<u64>()) {
        let p = common::random_problem(seed);
        let cfg = SolverConfig { n_out: 20, ..SolverConfig::default() };
        let rep = solve(&p, None, &cfg).unwrap();
        prop_assert!(p.in_bounds(&rep.solution));
        prop_assert!(rep.outer_iters <= 20);
    }

    #[test]
    fn pass_from_subproblem_minimizer_does_not_move(seed in any::<u64>(), rho in 0.2f64..5.0) {
        let mut p = common::random_problem(seed);
        let mut s = p.settings().clone();
        for v in [&mut s.y_min, &mut s.u_min, &mut s.du_min] {
            v.fill(-1e4);
        }
        for v in [&mut s.y_max, &mut s.u_max, &mut s.du_max] {
            v.fill(1e4);
        }
        p = MpcProblem::new(s, p.model().clone(), p.history().clone(), p.refs().to_vec()).unwrap();
        let st0 = random_state(&p, seed);
        let qp = build_sparse_qp(&p).unwrap();
        let d = st0.accelerated_duals();
        let mut mult: Vec<f64> = d.lambda.iter().flat_map(|v| v.iter().copied()).collect();
        mult.extend(d.gamma.iter().flat_map(|v| v.iter().copied()));
        let mult = DVector::from_vec(mult);
        // minimizer of f/rho + mult'(Ez - b) + |Ez - b|^2 / 2
        let lhs: DMatrix<f64> = &qp.hessian / rho + qp.eq_matrix.tr_mul(&qp.eq_matrix);
        let rhs = -(&qp.linear / rho + qp.eq_matrix.tr_mul(&(mult - &qp.eq_rhs)));
        let zstar = lhs.lu().solve(&rhs).unwrap();
        prop_assume!(zstar.amax() < 1e3);
        let z = PrimalPoint::from_flat(p.horizon(), p.n_y(), p.n_u(), zstar.as_slice()).unwrap();
        let mut st = SolverState::new(&p, z, d).unwrap();
        let sigma = cd_pass_coupled(&p, &mut st, &DiagCache::new(&p, rho).unwrap()).unwrap();
        prop_assert!(sigma <= 1e-16 * (1.0 + zstar.norm_squared()), "sigma {sigma:e}");
    }
}

#[test]
fn alpha_sequence_matches_recurrence() {
    assert!((next_alpha(1.0) - 1.618034).abs() < 1e-6);
    assert!((next_alpha(next_alpha(1.0)) - 2.193527).abs() < 1e-6);

    let p = common::random_problem(3);
    let mut st = random_state(&p, 3);
    let mut alpha = 1.0_f64;
    for _ in 1..=100 {
        accelerate(&mut st, true, true);
        alpha = (1.0 + (1.0 + 4.0 * alpha * alpha).sqrt()) / 2.0;
        assert!((st.alpha - alpha).abs() <= 1e-12 * alpha);
    }
}

#[test]
fn alpha_strictly_increases_through_the_solver() {
    let p = common::random_problem(11);
    let cfg = SolverConfig { n_out: 30, n_in: 2, eps_out: 0.0, ..SolverConfig::default() };
    let mut prev = 1.0;
    for k in 1..=30 {
        let mut st = random_state(&p, 11);
        let cfg = SolverConfig { n_out: k, ..cfg.clone() };
        let rep = solve_from_state(&p, &mut st, &cfg).unwrap();
        if rep.converged() {
            break;
        }
        assert!(st.alpha > prev);
        prev = st.alpha;
    }
}

#[test]
fn plain_updates_keep_alpha_at_one() {
    let p = common::random_problem(5);
    let mut st = random_state(&p, 5);
    let cfg = SolverConfig { n_out: 10, use_acceleration: false, ..SolverConfig::default() };
    solve_from_state(&p, &mut st, &cfg).unwrap();
    assert_eq!(st.alpha, 1.0);
}

#[test]
fn converges_to_the_reference_solution_at_tight_tolerance() {
    let cfg = SolverConfig { eps_in: 1e-14, eps_out: 1e-14, n_out: 20000, ..SolverConfig::default() };
    for seed in 0..20 {
        let p = common::feasible_problem(seed, false);
        let qp = build_sparse_qp(&p).unwrap();
        let oracle = reference_solve(&qp, 1e-10).unwrap();
        let rep = solve(&p, None, &cfg).unwrap();
        assert!(rep.converged(), "seed {seed}");
        let dev = (rep.solution.to_flat() - &oracle.z).amax();
        assert!(dev < 1e-5, "seed {seed}: deviation {dev:e}");
    }
}

#[test]
fn naive_and_coupled_solves_agree() {
    let p = common::feasible_problem(2, false);
    let coupled = solve(&p, None, &SolverConfig::default()).unwrap();
    let naive = solve(&p, None, &SolverConfig { use_coupled: false, ..SolverConfig::default() }).unwrap();
    assert_eq!(coupled.outer_iters, naive.outer_iters);
    assert!(coupled.solution.max_abs_diff(&naive.solution) <= 1e-10);
}

#[test]
fn rejects_bad_configuration() {
    let p = common::random_problem(1);
    let bad_rho = SolverConfig { rho: 0.0, ..SolverConfig::default() };
    assert!(matches!(solve(&p, None, &bad_rho), Err(Error::NonPositiveRho(_))));
    let no_inner = SolverConfig { n_in: 0, ..SolverConfig::default() };
    assert!(matches!(solve(&p, None, &no_inner), Err(Error::InvalidConfig(_))));
}

#[test]
fn zero_outer_budget_reports_max_iterations() {
    let p = common::random_problem(1);
    let rep = solve(&p, None, &SolverConfig { n_out: 0, ..SolverConfig::default() }).unwrap();
    assert!(!rep.converged());
    assert_eq!(rep.outer_iters, 0);
}

#[test]
fn rejects_warm_start_outside_the_box() {
    let p = common::random_problem(4);
    let mut z = PrimalPoint::zeros(p.horizon(), p.n_y(), p.n_u());
    z.y[0][0] = p.settings().y_max[0] + 1.0;
    let d = DualPoint::zeros(p.horizon(), p.n_y(), p.n_u());
    let err = solve(&p, Some((&z, &d)), &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InfeasibleWarmStart { .. }));
}

#[test]
fn rejects_wrong_warm_start_shape() {
    let p = common::random_problem(4);
    let z = PrimalPoint::zeros(p.horizon() + 1, p.n_y(), p.n_u());
    let d = DualPoint::zeros(p.horizon() + 1, p.n_y(), p.n_u());
    assert!(solve(&p, Some((&z, &d)), &SolverConfig::default()).is_err());
}
