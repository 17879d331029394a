//! Metropolis–Hastings moves on `(ell, tau, theta)` for one series with
//! known variances.
//!
//! Proposal functions return the candidate together with its log acceptance
//! ratio; the caller decides. `None` means the proposal is rejected outright
//! (no room to insert, or a shifted configuration with zero prior mass).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{log_likelihood_range, tau_is_valid, ChainState, SeriesView};
use crate::priors::{
    log_prior_ell_unchecked, log_prior_tau, log_prior_theta_term, log_prior_theta_unchecked,
    PriorConfig,
};

/// Everything a move needs to evaluate the posterior of one series.
#[derive(Clone, Copy, Debug)]
pub struct Target<'a> {
    pub x: SeriesView<'a>,
    pub sigma2: &'a [f64],
    pub prior: &'a PriorConfig,
    /// Replaces the likelihood by zero so the chain targets the prior.
    /// Test hook only.
    pub prior_only: bool,
}

impl Target<'_> {
    pub fn n_times(&self) -> usize {
        self.x.n_times()
    }

    fn loglik_range(&self, theta: &[f64], tau: &[usize], lo: usize, hi: usize) -> f64 {
        if self.prior_only {
            0.0
        } else {
            log_likelihood_range(self.x, theta, tau, self.sigma2, lo, hi)
        }
    }

    pub fn log_likelihood(&self, state: &ChainState) -> f64 {
        self.loglik_range(&state.theta, &state.tau, 1, self.n_times())
    }

    /// The four additive terms of the unnormalised log posterior.
    pub fn terms(&self, state: &ChainState) -> PosteriorTerms {
        PosteriorTerms {
            loglik: self.log_likelihood(state),
            theta: log_prior_theta_unchecked(&state.theta, self.sigma2, &self.prior.mu0, self.prior.nu0),
            tau: log_prior_tau(&state.tau, self.n_times()),
            ell: log_prior_ell_unchecked(state.ell(), self.n_times(), &self.prior.ell_prior),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorTerms {
    pub loglik: f64,
    pub theta: f64,
    pub tau: f64,
    pub ell: f64,
}

impl PosteriorTerms {
    pub fn total(&self) -> f64 {
        self.loglik + self.theta + self.tau + self.ell
    }
}

/// Candidate change-point configuration; `theta` is left untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct TauProposal {
    pub tau: Vec<usize>,
    pub log_ratio: f64,
    pub d_loglik: f64,
    pub d_log_prior_tau: f64,
    pub d_log_prior_ell: f64,
}

/// Candidate mean vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaProposal {
    pub theta: Vec<f64>,
    pub log_ratio: f64,
    pub loglik: f64,
    pub log_prior_theta: f64,
}

/// Metropolis–Hastings decision for a log acceptance ratio. NaN rejects.
pub fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Probability of proposing a birth with `ell` change-points and cap `max_ell`.
pub fn p_add(ell: usize, max_ell: usize) -> f64 {
    if ell >= max_ell {
        0.0
    } else if ell == 0 {
        1.0
    } else {
        0.5
    }
}

/// Knots immediately left and right of a non-knot time `t`.
fn bracket(tau: &[usize], n_times: usize, t: usize) -> (usize, usize) {
    let i = tau.partition_point(|&c| c < t);
    let a = if i == 0 { 1 } else { tau[i - 1] };
    let b = if i == tau.len() { n_times } else { tau[i] };
    (a, b)
}

/// Log acceptance ratio for inserting `t_star` into `tau` (which must not
/// contain it), returning the enlarged configuration.
///
/// Includes the likelihood ratio, the location prior ratio, the ratio of
/// count priors `f(l + 1) / f(l)`, and the proposal correction
/// `(1 - p_add(l + 1)) (gap - 1) / p_add(l)` where `gap` is the width of the
/// segment receiving `t_star`.
pub fn log_birth_ratio(target: &Target<'_>, tau: &[usize], theta: &[f64], t_star: usize) -> TauProposal {
    let n_times = target.n_times();
    let ell = tau.len();
    let max_ell = target.prior.max_ell;
    let (a, b) = bracket(tau, n_times, t_star);
    debug_assert!(a < t_star && t_star < b);
    let gap = b - a;

    let pos = tau.partition_point(|&c| c < t_star);
    let mut new_tau = Vec::with_capacity(ell + 1);
    new_tau.extend_from_slice(&tau[..pos]);
    new_tau.push(t_star);
    new_tau.extend_from_slice(&tau[pos..]);

    let d_loglik = target.loglik_range(theta, &new_tau, a, b) - target.loglik_range(theta, tau, a, b);
    let d_log_prior_tau = log_prior_tau(&new_tau, n_times) - log_prior_tau(tau, n_times);
    let ell_prior = &target.prior.ell_prior;
    let new_ell_prior = log_prior_ell_unchecked(ell + 1, n_times, ell_prior);
    let d_log_prior_ell = if new_ell_prior == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        new_ell_prior - log_prior_ell_unchecked(ell, n_times, ell_prior)
    };
    let log_proposal = (1.0 - p_add(ell + 1, max_ell)).ln() + ((gap - 1) as f64).ln()
        - p_add(ell, max_ell).ln();

    TauProposal {
        tau: new_tau,
        log_ratio: d_loglik + d_log_prior_tau + d_log_prior_ell + log_proposal,
        d_loglik,
        d_log_prior_tau,
        d_log_prior_ell,
    }
}

/// Log acceptance ratio for deleting `tau[index]`: the negated birth ratio of
/// re-inserting it into the reduced configuration.
pub fn log_death_ratio(target: &Target<'_>, tau: &[usize], theta: &[f64], index: usize) -> TauProposal {
    let mut reduced = tau.to_vec();
    let t = reduced.remove(index);
    let birth = log_birth_ratio(target, &reduced, theta, t);
    TauProposal {
        tau: reduced,
        log_ratio: -birth.log_ratio,
        d_loglik: -birth.d_loglik,
        d_log_prior_tau: -birth.d_log_prior_tau,
        d_log_prior_ell: -birth.d_log_prior_ell,
    }
}

/// Move 1: propose adding or deleting one change-point.
///
/// A birth picks one of the `l + 1` segments uniformly and a time strictly
/// inside it uniformly; a segment of width one has no room and the move is
/// rejected. A death picks one of the `l` change-points uniformly. `theta`
/// never changes: a new change-point adopts the mean already stored at its
/// time.
pub fn propose_birth_death<R: Rng + ?Sized>(
    state: &ChainState,
    target: &Target<'_>,
    rng: &mut R,
) -> Option<TauProposal> {
    let n_times = target.n_times();
    let ell = state.ell();
    let birth = rng.random::<f64>() < p_add(ell, target.prior.max_ell);
    if birth {
        let j = rng.random_range(0..=ell);
        let a = if j == 0 { 1 } else { state.tau[j - 1] };
        let b = if j == ell { n_times } else { state.tau[j] };
        if b - a < 2 {
            return None;
        }
        let t_star = rng.random_range(a + 1..b);
        Some(log_birth_ratio(target, &state.tau, &state.theta, t_star))
    } else {
        if ell == 0 {
            return None;
        }
        let i = rng.random_range(0..ell);
        Some(log_death_ratio(target, &state.tau, &state.theta, i))
    }
}

/// Move 2: Gaussian random walk on every `theta_t` with variance
/// `c * sigma2_t`, accepted or rejected as a block.
pub fn propose_theta_walk<R: Rng + ?Sized>(
    state: &ChainState,
    current: &PosteriorTerms,
    target: &Target<'_>,
    c: f64,
    rng: &mut R,
) -> ThetaProposal {
    let theta: Vec<f64> = state
        .theta
        .iter()
        .zip(target.sigma2)
        .map(|(&th, &s2)| {
            let z: f64 = rng.sample(StandardNormal);
            th + (c * s2).sqrt() * z
        })
        .collect();
    let loglik = target.loglik_range(&theta, &state.tau, 1, target.n_times());
    let log_prior_theta =
        log_prior_theta_unchecked(&theta, target.sigma2, &target.prior.mu0, target.prior.nu0);
    ThetaProposal {
        log_ratio: (loglik - current.loglik) + (log_prior_theta - current.theta),
        theta,
        loglik,
        log_prior_theta,
    }
}

/// Shared tail of moves 3.a and 3.b once the shifted entries
/// `first..=last` are known.
fn shift_ratio(
    state: &ChainState,
    target: &Target<'_>,
    new_tau: Vec<usize>,
    first: usize,
    last: usize,
) -> Option<TauProposal> {
    let n_times = target.n_times();
    if !tau_is_valid(&new_tau, n_times) {
        return None;
    }
    let tau = &state.tau;
    let lo = if first == 0 { 1 } else { tau[first - 1] };
    let hi = if last + 1 == tau.len() { n_times } else { tau[last + 1] };
    let d_loglik =
        target.loglik_range(&state.theta, &new_tau, lo, hi) - target.loglik_range(&state.theta, tau, lo, hi);
    let d_log_prior_tau = log_prior_tau(&new_tau, n_times) - log_prior_tau(tau, n_times);
    Some(TauProposal {
        tau: new_tau,
        log_ratio: d_loglik + d_log_prior_tau,
        d_loglik,
        d_log_prior_tau,
        d_log_prior_ell: 0.0,
    })
}

fn shifted(t: usize, eps: i64) -> usize {
    // zero is never a valid location, so clamping keeps invalid shifts invalid
    (t as i64 + eps).max(0) as usize
}

/// Move 3.a: shift every change-point independently by a uniform draw from
/// `-d1..=d1`. With no change-points there is nothing to shift and the
/// identity is returned.
pub fn propose_joint_shift<R: Rng + ?Sized>(
    state: &ChainState,
    target: &Target<'_>,
    d1: usize,
    rng: &mut R,
) -> Option<TauProposal> {
    let ell = state.ell();
    if ell == 0 {
        return Some(identity(state));
    }
    let d = d1 as i64;
    let new_tau: Vec<usize> = state
        .tau
        .iter()
        .map(|&t| shifted(t, rng.random_range(-d..=d)))
        .collect();
    shift_ratio(state, target, new_tau, 0, ell - 1)
}

/// Move 3.b: shift one uniformly chosen change-point by a uniform draw from
/// `-d2..=d2`.
pub fn propose_single_shift<R: Rng + ?Sized>(
    state: &ChainState,
    target: &Target<'_>,
    d2: usize,
    rng: &mut R,
) -> Option<TauProposal> {
    let ell = state.ell();
    if ell == 0 {
        return Some(identity(state));
    }
    let i = rng.random_range(0..ell);
    let d = d2 as i64;
    let mut new_tau = state.tau.clone();
    new_tau[i] = shifted(new_tau[i], rng.random_range(-d..=d));
    shift_ratio(state, target, new_tau, i, i)
}

fn identity(state: &ChainState) -> TauProposal {
    TauProposal {
        tau: state.tau.clone(),
        log_ratio: 0.0,
        d_loglik: 0.0,
        d_log_prior_tau: 0.0,
        d_log_prior_ell: 0.0,
    }
}

/// Move 4: exact Gibbs draw of every `theta_t` off the knots from its prior
/// `N(mu0_t, sigma2_t / nu0)`. Returns the new log prior of `theta`.
pub fn refresh_inactive<R: Rng + ?Sized>(state: &mut ChainState, target: &Target<'_>, rng: &mut R) -> f64 {
    let n_times = target.n_times();
    let (mu0, nu0) = (&target.prior.mu0, target.prior.nu0);
    let mut next_knot = 0;
    let mut lp = 0.0;
    for t in 1..=n_times {
        let active = if t == 1 || t == n_times {
            true
        } else if next_knot < state.tau.len() && state.tau[next_knot] == t {
            next_knot += 1;
            true
        } else {
            false
        };
        let i = t - 1;
        let s2 = target.sigma2[i];
        if !active {
            let z: f64 = rng.sample(StandardNormal);
            state.theta[i] = mu0[i] + (s2 / nu0).sqrt() * z;
        }
        lp += log_prior_theta_term(state.theta[i], s2, mu0[i], nu0);
    }
    lp
}
