//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's density code: the posterior is
//! rebuilt from the model definition term by term.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Prior on the number of change-points, mirrored independently.
#[derive(Clone, Copy, Debug)]
pub enum CountPrior {
    Complexity { alpha: f64, b: f64 },
    Poisson { lambda: f64, support_max: usize },
}

impl CountPrior {
    pub fn to_lib(self) -> slopecp::priors::EllPrior {
        match self {
            CountPrior::Complexity { alpha, b } => slopecp::priors::EllPrior::Complexity { alpha, b },
            CountPrior::Poisson { lambda, support_max } => {
                slopecp::priors::EllPrior::TruncatedPoisson { lambda, support_max }
            }
        }
    }

    pub fn log_density(self, ell: usize, n_times: usize) -> f64 {
        match self {
            CountPrior::Complexity { alpha, b } => {
                if ell == 0 {
                    0.0
                } else {
                    let t_star = (n_times - 2) as f64;
                    -alpha * ell as f64 * (b * t_star).ln() + alpha * ell as f64 * (ell as f64).ln()
                }
            }
            CountPrior::Poisson { lambda, support_max } => {
                if ell > support_max {
                    f64::NEG_INFINITY
                } else {
                    let mut lf = 0.0;
                    for k in 1..=ell {
                        lf += (k as f64).ln();
                    }
                    -lambda + ell as f64 * lambda.ln() - lf
                }
            }
        }
    }
}

/// One small posterior instance with fixed variances.
#[derive(Clone, Debug)]
pub struct Instance {
    pub n_times: usize,
    pub n_reps: usize,
    /// `[time][replicate]`.
    pub x: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub mu0: Vec<f64>,
    pub nu0: f64,
    pub prior: CountPrior,
    pub max_ell: usize,
    pub tau: Vec<usize>,
    pub theta: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, to stay clear of the library's samplers
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng, max_t: usize, max_r: usize, max_l: usize) -> Instance {
        let n_times = rng.random_range(3..=max_t);
        let n_reps = rng.random_range(1..=max_r);
        let cap = (n_times - 2).min(max_l);
        let ell = rng.random_range(0..=cap);
        let max_ell = rng.random_range(ell.max(1).min(n_times - 2)..=n_times - 2);
        let mut interior: Vec<usize> = (2..n_times).collect();
        for i in (1..interior.len()).rev() {
            let j = rng.random_range(0..=i);
            interior.swap(i, j);
        }
        let mut tau: Vec<usize> = interior[..ell].to_vec();
        tau.sort_unstable();
        let prior = if rng.random::<bool>() {
            CountPrior::Complexity {
                alpha: rng.random_range(0.5..3.0),
                b: rng.random_range(1.5..5.0),
            }
        } else {
            CountPrior::Poisson {
                lambda: rng.random_range(0.3..4.0),
                support_max: rng.random_range(ell..=ell + 2),
            }
        };
        Instance {
            n_times,
            n_reps,
            x: (0..n_times * n_reps).map(|_| 2.0 * normal(rng)).collect(),
            sigma2: (0..n_times).map(|_| rng.random_range(0.2..3.0)).collect(),
            mu0: (0..n_times).map(|_| normal(rng)).collect(),
            nu0: rng.random_range(0.05..2.0),
            prior,
            max_ell,
            tau,
            theta: (0..n_times).map(|_| 1.5 * normal(rng)).collect(),
        }
    }

    pub fn mean(&self, theta: &[f64], tau: &[usize], t: usize) -> f64 {
        let mut knots = vec![1];
        knots.extend_from_slice(tau);
        knots.push(self.n_times);
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a <= t && t <= b {
                if a == b {
                    return theta[a - 1];
                }
                let frac = (t - a) as f64 / (b - a) as f64;
                return theta[a - 1] * (1.0 - frac) + theta[b - 1] * frac;
            }
        }
        unreachable!("t outside 1..=T")
    }

    /// Probability of drawing `tau` by placing change-points left to right,
    /// each uniformly among the positions that leave room for the rest.
    pub fn log_location_prior(&self, tau: &[usize]) -> f64 {
        let ell = tau.len();
        let t = self.n_times;
        let mut prev = 1;
        let mut lp = 0.0;
        for (j, &c) in tau.iter().enumerate() {
            let hi = t - ell + j; // largest allowed position of the (j+1)-th point
            if c <= prev || c > hi {
                return f64::NEG_INFINITY;
            }
            lp -= ((hi - prev) as f64).ln();
            prev = c;
        }
        lp
    }

    pub fn log_posterior(&self, theta: &[f64], tau: &[usize]) -> f64 {
        if tau.len() > self.max_ell {
            return f64::NEG_INFINITY;
        }
        let loc = self.log_location_prior(tau);
        if loc == f64::NEG_INFINITY {
            return loc;
        }
        let mut lp = loc + self.prior.log_density(tau.len(), self.n_times);
        for t in 1..=self.n_times {
            let s2 = self.sigma2[t - 1];
            let m = self.mean(theta, tau, t);
            for r in 0..self.n_reps {
                let v = self.x[(t - 1) * self.n_reps + r];
                lp += -0.5 * (2.0 * PI * s2).ln() - (v - m).powi(2) / (2.0 * s2);
            }
            let pv = s2 / self.nu0;
            lp += -0.5 * (2.0 * PI * pv).ln() - (theta[t - 1] - self.mu0[t - 1]).powi(2) / (2.0 * pv);
        }
        lp
    }

    pub fn birth_probability(&self, ell: usize) -> f64 {
        match ell {
            e if e >= self.max_ell => 0.0,
            0 => 1.0,
            _ => 0.5,
        }
    }

    /// Probability of proposing the move from `from` to `to`, which differ by
    /// one change-point.
    pub fn log_proposal(&self, from: &[usize], to: &[usize]) -> f64 {
        let ell = from.len();
        if to.len() == ell + 1 {
            let added = *to.iter().find(|c| !from.contains(c)).unwrap();
            let left = from.iter().copied().filter(|&c| c < added).max().unwrap_or(1);
            let right = from.iter().copied().filter(|&c| c > added).min().unwrap_or(self.n_times);
            let inside = (right - left - 1) as f64;
            self.birth_probability(ell).ln() - ((ell + 1) as f64).ln() - inside.ln()
        } else {
            (1.0 - self.birth_probability(ell)).ln() - (ell as f64).ln()
        }
    }

    /// Metropolis-Hastings log ratio of a dimension-change move.
    pub fn log_jump_ratio(&self, to: &[usize]) -> f64 {
        let target = self.log_posterior(&self.theta, to);
        if target == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        target - self.log_posterior(&self.theta, &self.tau) + self.log_proposal(to, &self.tau)
            - self.log_proposal(&self.tau, to)
    }

    pub fn lib_prior(&self) -> slopecp::priors::PriorConfig {
        slopecp::priors::PriorConfig::new(self.nu0, self.mu0.clone(), self.prior.to_lib(), self.max_ell).unwrap()
    }

    pub fn state(&self) -> slopecp::model::ChainState {
        slopecp::model::ChainState::new(self.tau.clone(), self.theta.clone())
    }
}

/// All strictly increasing `ell`-subsets of `2..=T-1`.
pub fn configurations(n_times: usize, ell: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, end: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for t in start..=end {
            cur.push(t);
            rec(t + 1, end, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(2, n_times - 1, ell, &mut Vec::new(), &mut out);
    out
}

/// Compares two log ratios, treating matching infinities as equal.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a == f64::NEG_INFINITY && b == f64::NEG_INFINITY) || (a - b).abs() <= tol
}

/// Outcome of comparing every move's log acceptance ratio with the oracle.
#[derive(Debug, Default)]
pub struct RatioCheck {
    pub comparisons: usize,
    pub max_err: f64,
    pub mismatches: Vec<String>,
    pub reciprocity_failures: usize,
}

impl RatioCheck {
    fn compare(&mut self, what: &str, lib: f64, oracle: f64, tol: f64) {
        self.comparisons += 1;
        if lib.is_finite() && oracle.is_finite() {
            self.max_err = self.max_err.max((lib - oracle).abs());
        }
        if !close(lib, oracle, tol) {
            self.mismatches.push(format!("{what}: library {lib} vs oracle {oracle}"));
        }
    }
}

/// Checks births at every free time, deaths of every change-point, Move 1
/// reciprocity, a random walk on `theta` and both shift moves.
pub fn check_move_ratios(inst: &Instance, rng: &mut ChaCha8Rng, tol: f64, out: &mut RatioCheck) {
    use slopecp::model::SeriesView;
    use slopecp::sampler::moves::{
        log_birth_ratio, log_death_ratio, propose_joint_shift, propose_single_shift, propose_theta_walk, Target,
    };

    let prior = inst.lib_prior();
    let target = Target {
        x: SeriesView::new(&inst.x, inst.n_times, inst.n_reps).unwrap(),
        sigma2: &inst.sigma2,
        prior: &prior,
        prior_only: false,
    };
    let state = inst.state();
    let ell = inst.tau.len();

    if ell < inst.max_ell {
        for t in 2..inst.n_times {
            if inst.tau.contains(&t) {
                continue;
            }
            let lib = log_birth_ratio(&target, &inst.tau, &inst.theta, t);
            out.compare(&format!("birth at {t} into {:?}", inst.tau), lib.log_ratio, inst.log_jump_ratio(&lib.tau), tol);
            // reciprocity: deleting the new point from the enlarged state
            let idx = lib.tau.iter().position(|&c| c == t).unwrap();
            let back = log_death_ratio(&target, &lib.tau, &inst.theta, idx);
            if lib.log_ratio.is_finite() && lib.log_ratio + back.log_ratio != 0.0 {
                out.reciprocity_failures += 1;
            }
        }
    }
    for i in 0..ell {
        let lib = log_death_ratio(&target, &inst.tau, &inst.theta, i);
        out.compare(&format!("death of {} from {:?}", inst.tau[i], inst.tau), lib.log_ratio, inst.log_jump_ratio(&lib.tau), tol);
    }

    let current = inst.log_posterior(&inst.theta, &inst.tau);
    let terms = target.terms(&state);
    let walk = propose_theta_walk(&state, &terms, &target, rng.random_range(0.01..1.0), rng);
    out.compare("theta walk", walk.log_ratio, inst.log_posterior(&walk.theta, &inst.tau) - current, tol);

    let d1 = rng.random_range(1..=2);
    if let Some(p) = propose_joint_shift(&state, &target, d1, rng) {
        out.compare(&format!("joint shift {:?} -> {:?}", inst.tau, p.tau), p.log_ratio, inst.log_posterior(&inst.theta, &p.tau) - current, tol);
    }
    let d2 = rng.random_range(1..=3);
    if let Some(p) = propose_single_shift(&state, &target, d2, rng) {
        out.compare(&format!("single shift {:?} -> {:?}", inst.tau, p.tau), p.log_ratio, inst.log_posterior(&inst.theta, &p.tau) - current, tol);
    }
}
