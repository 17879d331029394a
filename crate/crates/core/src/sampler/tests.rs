use super::moves::*;
use super::*;
use crate::priors::{ell_prior_pmf, EllPrior};
use rand::SeedableRng;

fn prior(n_times: usize, max_ell: usize, ell_prior: EllPrior) -> PriorConfig {
    PriorConfig::new(0.1, vec![0.0; n_times], ell_prior, max_ell).unwrap()
}

fn config(n_times: usize, ell_prior: EllPrior) -> SamplerConfig {
    SamplerConfig {
        prior: prior(n_times, n_times - 2, ell_prior),
        variance: VarianceConfig::new(VarianceMode::FixedFree),
        tunables: MoveTunables::defaults(n_times),
        schedule: Schedule {
            iterations: 2_000,
            burn_in: 500,
            thin: 5,
            warmup: 200,
        },
        prior_only: false,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn p_add_cases() {
    assert_eq!(p_add(0, 10), 1.0);
    assert_eq!(p_add(5, 10), 0.5);
    assert_eq!(p_add(10, 10), 0.0);
    assert_eq!(p_add(0, 0), 0.0);
}

#[test]
fn birth_into_a_unit_gap_is_rejected_immediately() {
    // T=3 with its only interior point occupied: every segment has width 1
    let x = [0.0; 3];
    let v = SeriesView::new(&x, 3, 1).unwrap();
    let p = prior(3, 1, EllPrior::complexity_default());
    let target = Target { x: v, sigma2: &[1.0; 3], prior: &p, prior_only: false };
    // cap 1 forces deaths; raise it artificially by using a state with no room
    let state = ChainState::new(vec![2], vec![0.0; 3]);
    let mut r = rng(1);
    for _ in 0..100 {
        // only deaths are possible at the cap
        let prop = propose_birth_death(&state, &target, &mut r).unwrap();
        assert!(prop.tau.is_empty());
    }
    // with a higher cap, births into (1,2) and (2,3) have no room
    let x5 = [0.0; 5];
    let v5 = SeriesView::new(&x5, 5, 1).unwrap();
    let p5 = prior(5, 3, EllPrior::complexity_default());
    let t5 = Target { x: v5, sigma2: &[1.0; 5], prior: &p5, prior_only: false };
    let full = ChainState::new(vec![2, 3, 4], vec![0.0; 5]);
    let mut none = 0;
    for _ in 0..200 {
        if propose_birth_death(&full, &t5, &mut r).is_none() {
            none += 1;
        }
    }
    assert_eq!(none, 0, "at the cap only deaths are proposed");
    let crowded = ChainState::new(vec![2, 3], vec![0.0; 5]);
    for _ in 0..200 {
        match propose_birth_death(&crowded, &t5, &mut r) {
            None => none += 1,
            Some(p) => assert!(p.tau.len() == 1 || p.tau == vec![2, 3, 4]),
        }
    }
    assert!(none > 0);
}

#[test]
fn chain_stays_put_on_rejected_birth() {
    let x = [0.0; 4];
    let v = SeriesView::new(&x, 4, 1).unwrap();
    let mut cfg = config(4, EllPrior::complexity_default());
    cfg.prior.max_ell = 2;
    let mut chain = Chain::new(v, vec![1.0; 4], &cfg, rng(3)).unwrap();
    chain.state.tau = vec![2, 3];
    chain.terms = Target { x: v, sigma2: &[1.0; 4], prior: &cfg.prior, prior_only: false }.terms(&chain.state);
    // state at the cap: any accepted move 1 must be a death
    for _ in 0..50 {
        let before = chain.state.ell();
        let a = chain.step();
        if a.birth_death {
            assert!(chain.state.ell() < before || before < 2);
        }
    }
}

#[test]
fn death_is_the_exact_reciprocal_of_birth() {
    let mut r = rng(9);
    for _ in 0..200 {
        let n_times = r.random_range(5..20);
        let n_reps = r.random_range(1..4);
        let x: Vec<f64> = (0..n_times * n_reps).map(|_| r.random_range(-3.0..3.0)).collect();
        let theta: Vec<f64> = (0..n_times).map(|_| r.random_range(-3.0..3.0)).collect();
        let s2: Vec<f64> = (0..n_times).map(|_| r.random_range(0.2..3.0)).collect();
        let v = SeriesView::new(&x, n_times, n_reps).unwrap();
        let p = prior(n_times, n_times - 2, EllPrior::complexity_default());
        let target = Target { x: v, sigma2: &s2, prior: &p, prior_only: false };
        let ell = r.random_range(1..=(n_times - 2).min(4));
        let mut tau: Vec<usize> = (2..n_times).collect();
        while tau.len() > ell {
            let i = r.random_range(0..tau.len());
            tau.remove(i);
        }
        for j in 0..ell {
            let death = log_death_ratio(&target, &tau, &theta, j);
            let mut reduced = tau.clone();
            let t = reduced.remove(j);
            let birth = log_birth_ratio(&target, &reduced, &theta, t);
            assert_eq!(birth.tau, tau);
            assert_eq!(death.log_ratio + birth.log_ratio, 0.0);
        }
    }
}

#[test]
fn init_uses_conjugate_posterior_mean() {
    let x = [1.0, 3.0, 0.0, 0.0, 2.0, 2.0];
    let v = SeriesView::new(&x, 3, 2).unwrap();
    let p = PriorConfig::new(1.0, vec![0.0, 6.0, 0.0], EllPrior::complexity_default(), 1).unwrap();
    let s = init_state(v, &p, &mut rng(0));
    assert!((s.theta[0] - 4.0 / 3.0).abs() < 1e-15);
    assert!((s.theta[1] - 2.0).abs() < 1e-15);
    assert_eq!(s.tau, vec![2]);

    let heavy = PriorConfig { nu0: 1e12, ..p.clone() };
    let s = init_state(v, &heavy, &mut rng(0));
    assert!((s.theta[1] - 6.0).abs() < 1e-9);
    let light = PriorConfig { nu0: 1e-12, ..p };
    let s = init_state(v, &light, &mut rng(0));
    assert!((s.theta[0] - 2.0).abs() < 1e-9);
}

#[test]
fn init_location_is_uniform_over_interior() {
    let x = vec![0.0; 6];
    let v = SeriesView::new(&x, 6, 1).unwrap();
    let p = prior(6, 4, EllPrior::complexity_default());
    let mut counts = [0usize; 7];
    let mut r = rng(4);
    for _ in 0..8000 {
        counts[init_state(v, &p, &mut r).tau[0]] += 1;
    }
    assert_eq!(counts[0] + counts[1] + counts[6], 0);
    for c in &counts[2..6] {
        assert!((*c as f64 / 8000.0 - 0.25).abs() < 0.03);
    }
}

#[test]
fn joint_shift_with_zero_steps_is_neutral() {
    let x = vec![0.5; 10];
    let v = SeriesView::new(&x, 10, 1).unwrap();
    let p = prior(10, 8, EllPrior::complexity_default());
    let target = Target { x: v, sigma2: &[1.0; 10], prior: &p, prior_only: false };
    let state = ChainState::new(vec![3, 7], vec![0.1; 10]);
    let mut r = rng(2);
    let mut seen_identity = false;
    for _ in 0..200 {
        if let Some(prop) = propose_joint_shift(&state, &target, 1, &mut r) {
            if prop.tau == state.tau {
                assert_eq!(prop.log_ratio, 0.0);
                seen_identity = true;
            }
        }
    }
    assert!(seen_identity);
    let empty = ChainState::new(vec![], vec![0.1; 10]);
    let prop = propose_joint_shift(&empty, &target, 1, &mut r).unwrap();
    assert_eq!(prop.log_ratio, 0.0);
}

#[test]
fn shifts_into_ties_are_rejected() {
    let x = vec![0.0; 10];
    let v = SeriesView::new(&x, 10, 1).unwrap();
    let p = prior(10, 8, EllPrior::complexity_default());
    let target = Target { x: v, sigma2: &[1.0; 10], prior: &p, prior_only: false };
    let state = ChainState::new(vec![4, 5], vec![0.0; 10]);
    let mut r = rng(8);
    for _ in 0..500 {
        if let Some(prop) = propose_single_shift(&state, &target, 3, &mut r) {
            assert!(crate::model::tau_is_valid(&prop.tau, 10));
        }
        if let Some(prop) = propose_joint_shift(&state, &target, 1, &mut r) {
            assert!(crate::model::tau_is_valid(&prop.tau, 10));
        }
    }
}

#[test]
fn tiny_random_walk_is_always_accepted() {
    let x = [0.3, 0.1, -0.2, 0.5, 0.0, 0.4];
    let v = SeriesView::new(&x, 6, 1).unwrap();
    let p = prior(6, 4, EllPrior::complexity_default());
    let target = Target { x: v, sigma2: &[1.0; 6], prior: &p, prior_only: false };
    let state = ChainState::new(vec![3], vec![0.2; 6]);
    let terms = target.terms(&state);
    let mut r = rng(6);
    for _ in 0..100 {
        let prop = propose_theta_walk(&state, &terms, &target, 1e-300, &mut r);
        assert!(prop.log_ratio.abs() < 1e-12);
    }
}

#[test]
fn walk_on_inactive_theta_only_moves_the_prior() {
    let x = [0.3, 0.1, -0.2, 0.5, 0.0, 0.4];
    let v = SeriesView::new(&x, 6, 1).unwrap();
    let p = prior(6, 4, EllPrior::complexity_default());
    let target = Target { x: v, sigma2: &[1.0; 6], prior: &p, prior_only: false };
    let a = ChainState::new(vec![3], vec![0.2; 6]);
    let mut b = a.clone();
    b.theta[1] = 5.0;
    b.theta[4] = -2.0;
    let (ta, tb) = (target.terms(&a), target.terms(&b));
    assert_eq!(ta.loglik, tb.loglik);
    assert!(ta.theta != tb.theta);
}

#[test]
fn refresh_touches_only_inactive_theta() {
    let x = vec![0.0; 8];
    let v = SeriesView::new(&x, 8, 1).unwrap();
    let p = prior(8, 6, EllPrior::complexity_default());
    let s2 = [1.0; 8];
    let target = Target { x: v, sigma2: &s2, prior: &p, prior_only: false };
    let mut state = ChainState::new(vec![3, 6], vec![7.0; 8]);
    let before_ll = target.log_likelihood(&state);
    let lp = refresh_inactive(&mut state, &target, &mut rng(1));
    for t in [1, 3, 6, 8] {
        assert_eq!(state.theta_at(t), 7.0);
    }
    for t in [2, 4, 5, 7] {
        assert_ne!(state.theta_at(t), 7.0);
    }
    assert_eq!(target.log_likelihood(&state), before_ll);
    assert_eq!(lp, target.terms(&state).theta);

    let mut full = ChainState::new((2..8).collect(), vec![7.0; 8]);
    refresh_inactive(&mut full, &target, &mut rng(1));
    assert!(full.theta.iter().all(|&t| t == 7.0));
}

#[test]
fn refreshed_inactive_theta_follow_their_prior() {
    let x = vec![0.0; 5];
    let v = SeriesView::new(&x, 5, 1).unwrap();
    let mut p = prior(5, 3, EllPrior::complexity_default());
    p.mu0 = vec![0.0, 2.0, 0.0, 0.0, 0.0];
    p.nu0 = 0.5;
    let s2 = [1.0, 3.0, 1.0, 1.0, 1.0];
    let target = Target { x: v, sigma2: &s2, prior: &p, prior_only: false };
    let mut state = ChainState::new(vec![3], vec![0.0; 5]);
    let mut r = rng(12);
    let n = 40_000;
    let (mut m1, mut m2) = (0.0, 0.0);
    for _ in 0..n {
        refresh_inactive(&mut state, &target, &mut r);
        m1 += state.theta[1];
        m2 += state.theta[1] * state.theta[1];
    }
    let mean = m1 / n as f64;
    let var = m2 / n as f64 - mean * mean;
    // prior N(2, 3 / 0.5)
    assert!((mean - 2.0).abs() < 0.05, "{mean}");
    assert!((var / 6.0 - 1.0).abs() < 0.03, "{var}");
}

#[test]
fn same_seed_gives_identical_trace() {
    let n_times = 30;
    let mut r = rng(21);
    let x: Vec<f64> = (0..n_times * 2).map(|i| (i / 2) as f64 * 0.1 + r.random_range(-0.5..0.5)).collect();
    let v = SeriesView::new(&x, n_times, 2).unwrap();
    let cfg = config(n_times, EllPrior::complexity_default());
    let a = run_series(v, vec![0.3; n_times], &cfg, rng(77)).unwrap();
    let b = run_series(v, vec![0.3; n_times], &cfg, rng(77)).unwrap();
    assert_eq!(a, b);
    let c = run_series(v, vec![0.3; n_times], &cfg, rng(78)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn recorded_iterations_follow_the_schedule() {
    let n_times = 12;
    let x = vec![0.0; n_times];
    let v = SeriesView::new(&x, n_times, 1).unwrap();
    let cfg = config(n_times, EllPrior::complexity_default());
    let t = run_series(v, vec![1.0; n_times], &cfg, rng(5)).unwrap();
    let iters: Vec<usize> = t.records.iter().map(|r| r.iter).collect();
    let expect: Vec<usize> = (501..=2000).filter(|m| m % 5 == 0).collect();
    assert_eq!(iters, expect);
    assert_eq!(t.accept_counts.iterations, 2000);
}

#[test]
fn cached_log_posterior_tracks_recomputation() {
    let n_times = 25;
    let mut r = rng(31);
    let x: Vec<f64> = (0..n_times * 3).map(|_| r.random_range(-1.0..1.0)).collect();
    let v = SeriesView::new(&x, n_times, 3).unwrap();
    let cfg = config(n_times, EllPrior::poisson_default());
    let s2 = vec![0.5; n_times];
    let mut chain = Chain::new(v, s2.clone(), &cfg, rng(8)).unwrap();
    for _ in 0..3000 {
        chain.step();
        let target = Target { x: v, sigma2: &s2, prior: &cfg.prior, prior_only: false };
        let fresh = target.terms(chain.state()).total();
        assert!((fresh - chain.log_posterior()).abs() < 1e-8);
    }
}

#[test]
fn gibbs_free_chain_updates_variances() {
    let n_times = 20;
    let mut r = rng(41);
    let x: Vec<f64> = (0..n_times * 3).map(|_| r.random_range(-1.0..1.0)).collect();
    let v = SeriesView::new(&x, n_times, 3).unwrap();
    let mut cfg = config(n_times, EllPrior::complexity_default());
    cfg.variance.mode = VarianceMode::GibbsFree;
    let trace = run_series(v, vec![0.5; n_times], &cfg, rng(1)).unwrap();
    assert!(!trace.is_empty());
    cfg.variance.mode = VarianceMode::GibbsShared;
    assert!(matches!(run_series(v, vec![0.5; n_times], &cfg, rng(1)), Err(Error::Config(_))));
}

#[test]
fn prior_only_chain_reproduces_poisson_prior() {
    let n_times = 20;
    let x = vec![0.0; n_times];
    let v = SeriesView::new(&x, n_times, 1).unwrap();
    let mut cfg = config(n_times, EllPrior::TruncatedPoisson { lambda: 2.0, support_max: 10 });
    cfg.prior_only = true;
    cfg.schedule = Schedule { iterations: 60_000, burn_in: 1_000, thin: 1, warmup: 0 };
    let trace = run_series(v, vec![1.0; n_times], &cfg, rng(10)).unwrap();
    let pmf = ell_prior_pmf(n_times, &cfg.prior.ell_prior, cfg.prior.max_ell);
    let mut emp = vec![0.0; pmf.len()];
    for rec in &trace.records {
        emp[rec.ell()] += 1.0 / trace.len() as f64;
    }
    let tv: f64 = 0.5 * pmf.iter().zip(&emp).map(|(p, q)| (p - q).abs()).sum::<f64>();
    assert!(tv < 0.05, "total variation {tv}");
}
