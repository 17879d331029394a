//! The per-series Metropolis–Hastings sampler.
//!
//! Each iteration applies, in order: a birth/death move on the change-points,
//! a random walk on the mean parameters, a joint or single shift of the
//! change-points (one of the two with probability ½ each), and a Gibbs
//! refresh of the mean parameters off the change-points. Sampler `s3` adds a
//! Gibbs draw of the series' variances at the end of every iteration.

pub mod moves;
pub mod trace;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainState, SeriesView};
use crate::priors::PriorConfig;
use crate::variance::{gibbs_update_variance_free, VarianceConfig, VarianceMode};

pub use moves::{p_add, PosteriorTerms, Target};
pub use trace::{AcceptCounts, Accepts, Trace, TraceRecord};

const INIT_RETRIES: usize = 100;

/// Proposal scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveTunables {
    /// Random-walk variance multiplier for the mean parameters.
    pub c: f64,
    /// Half-width of the joint shift.
    pub d1: usize,
    /// Half-width of the single shift.
    pub d2: usize,
}

impl MoveTunables {
    pub const DEFAULT_C: f64 = 0.05;
    pub const DEFAULT_D1: usize = 1;

    /// Defaults for a series of length `n_times`; `d2 = max(1, floor(T / 20))`.
    pub fn defaults(n_times: usize) -> Self {
        MoveTunables {
            c: Self::DEFAULT_C,
            d1: Self::DEFAULT_D1,
            d2: default_d2(n_times),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        if self.d1 == 0 || self.d2 == 0 {
            return Err(Error::Config(format!(
                "shift widths must be at least 1, got d1={} d2={}",
                self.d1, self.d2
            )));
        }
        Ok(())
    }
}

pub fn default_d2(n_times: usize) -> usize {
    (n_times / 20).max(1)
}

/// Iteration schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Fixed-variance iterations run before a Gibbs-variance chain starts.
    pub warmup: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            iterations: 70_000,
            burn_in: 20_000,
            thin: 10,
            warmup: 30_000,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} leaves nothing of {} iterations",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub prior: PriorConfig,
    pub variance: VarianceConfig,
    pub tunables: MoveTunables,
    pub schedule: Schedule,
    /// Disables the likelihood. Test hook for prior calibration.
    pub prior_only: bool,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.tunables.validate()?;
        self.schedule.validate()
    }
}

/// Starting state: one change-point uniform on `2..=T-1` (none when the cap
/// is zero) and every `theta_t` at its conjugate posterior mean
/// `(nu0 mu0_t + R x̄_t) / (nu0 + R)`.
pub fn init_state<R: Rng + ?Sized>(x: SeriesView<'_>, prior: &PriorConfig, rng: &mut R) -> ChainState {
    let n_times = x.n_times();
    let r = x.n_reps() as f64;
    let theta = (1..=n_times)
        .map(|t| (prior.nu0 * prior.mu0[t - 1] + r * x.replicate_mean(t)) / (prior.nu0 + r))
        .collect();
    let tau = if prior.max_ell == 0 {
        vec![]
    } else {
        vec![rng.random_range(2..n_times)]
    };
    ChainState::new(tau, theta)
}

/// One series' chain with cached posterior terms.
#[derive(Clone, Debug)]
pub struct Chain<'a> {
    x: SeriesView<'a>,
    cfg: &'a SamplerConfig,
    state: ChainState,
    sigma2: Vec<f64>,
    terms: PosteriorTerms,
    gibbs_variance: bool,
    rng: ChaCha8Rng,
}

impl<'a> Chain<'a> {
    /// Initialises a chain with fixed variances `sigma2`. Draws a new starting
    /// location until the log posterior is finite.
    pub fn new(x: SeriesView<'a>, sigma2: Vec<f64>, cfg: &'a SamplerConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        if sigma2.len() != x.n_times() || cfg.prior.n_times() != x.n_times() {
            return Err(Error::Config(format!(
                "series has T={} but variances cover {} and prior means {} time-points",
                x.n_times(),
                sigma2.len(),
                cfg.prior.n_times()
            )));
        }
        crate::model::check_variances(&sigma2)?;
        for _ in 0..INIT_RETRIES {
            let state = init_state(x, &cfg.prior, &mut rng);
            let terms = Self::target_for(x, &sigma2, cfg).terms(&state);
            if terms.total().is_finite() {
                return Ok(Chain {
                    x,
                    cfg,
                    state,
                    sigma2,
                    terms,
                    gibbs_variance: false,
                    rng,
                });
            }
        }
        Err(Error::Numeric(format!(
            "log posterior at the starting state is not finite after {INIT_RETRIES} attempts"
        )))
    }

    fn target_for<'b>(x: SeriesView<'b>, sigma2: &'b [f64], cfg: &'b SamplerConfig) -> Target<'b> {
        Target {
            x,
            sigma2,
            prior: &cfg.prior,
            prior_only: cfg.prior_only,
        }
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn series(&self) -> SeriesView<'a> {
        self.x
    }

    pub fn terms(&self) -> PosteriorTerms {
        self.terms
    }

    pub fn log_posterior(&self) -> f64 {
        self.terms.total()
    }

    /// Switches the chain to per-iteration Gibbs updates of its own variances.
    pub fn enable_gibbs_variance(&mut self) {
        self.gibbs_variance = true;
    }

    /// Replaces the variances, e.g. after a shared Gibbs update.
    pub fn set_variances(&mut self, sigma2: Vec<f64>) {
        debug_assert_eq!(sigma2.len(), self.x.n_times());
        self.sigma2 = sigma2;
        self.terms = Self::target_for(self.x, &self.sigma2, self.cfg).terms(&self.state);
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One full iteration.
    pub fn step(&mut self) -> Accepts {
        let cfg = self.cfg;
        let mut accepts = Accepts::default();
        let target = Self::target_for(self.x, &self.sigma2, cfg);

        // move 1
        if let Some(p) = moves::propose_birth_death(&self.state, &target, &mut self.rng) {
            if moves::accept(p.log_ratio, &mut self.rng) {
                self.state.tau = p.tau;
                self.terms.loglik += p.d_loglik;
                self.terms.tau += p.d_log_prior_tau;
                self.terms.ell += p.d_log_prior_ell;
                accepts.birth_death = true;
            }
        }
        self.debug_check();

        // move 2
        let p = moves::propose_theta_walk(&self.state, &self.terms, &target, cfg.tunables.c, &mut self.rng);
        if moves::accept(p.log_ratio, &mut self.rng) {
            self.state.theta = p.theta;
            self.terms.loglik = p.loglik;
            self.terms.theta = p.log_prior_theta;
            accepts.theta_walk = true;
        }

        // move 3.a or 3.b
        let joint = self.rng.random::<f64>() < 0.5;
        let proposal = if joint {
            moves::propose_joint_shift(&self.state, &target, cfg.tunables.d1, &mut self.rng)
        } else {
            moves::propose_single_shift(&self.state, &target, cfg.tunables.d2, &mut self.rng)
        };
        if let Some(p) = proposal {
            if moves::accept(p.log_ratio, &mut self.rng) {
                self.state.tau = p.tau;
                self.terms.loglik += p.d_loglik;
                self.terms.tau += p.d_log_prior_tau;
                accepts.shift = true;
            }
        }
        self.debug_check();

        // move 4
        self.terms.theta = moves::refresh_inactive(&mut self.state, &target, &mut self.rng);

        if self.gibbs_variance {
            let mut sigma2 = std::mem::take(&mut self.sigma2);
            gibbs_update_variance_free(
                self.x,
                &self.state,
                &cfg.prior.mu0,
                cfg.prior.nu0,
                &cfg.variance,
                &mut self.rng,
                &mut sigma2,
            );
            self.set_variances(sigma2);
        }
        accepts
    }

    #[inline]
    fn debug_check(&self) {
        debug_assert!(
            self.state.validate(self.cfg.prior.max_ell).is_ok(),
            "invalid state {:?}",
            self.state.tau
        );
    }

    pub(crate) fn record(&self, iter: usize, accepts: Accepts) -> TraceRecord {
        TraceRecord::capture(iter, &self.state, self.log_posterior(), accepts)
    }
}

/// Runs one series for `cfg.schedule.iterations` iterations and returns the
/// thinned post-burn-in trace.
///
/// `sigma2` holds the plug-in variances: they are used throughout by `s1`
/// and `s2`, and by `s3` for its fixed-variance warm-up and as the starting
/// point of its Gibbs updates. `s4` couples all series and is driven by
/// [`crate::orchestrate`] instead.
pub fn run_series(x: SeriesView<'_>, sigma2: Vec<f64>, cfg: &SamplerConfig, rng: ChaCha8Rng) -> Result<Trace> {
    cfg.validate()?;
    if cfg.variance.mode == VarianceMode::GibbsShared {
        return Err(Error::Config(
            "sampler s4 updates variances across series and cannot run one series alone".into(),
        ));
    }
    let mut chain = Chain::new(x, sigma2, cfg, rng)?;
    if cfg.variance.mode == VarianceMode::GibbsFree {
        for _ in 0..cfg.schedule.warmup {
            chain.step();
        }
        chain.enable_gibbs_variance();
    }
    let sched = cfg.schedule;
    let mut trace = Trace::new(x.n_times(), cfg.prior.max_ell, sched.burn_in, sched.thin);
    for iter in 1..=sched.iterations {
        let accepts = chain.step();
        trace.accept_counts.add(accepts);
        if trace.should_record(iter) {
            trace.records.push(chain.record(iter, accepts));
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests;
