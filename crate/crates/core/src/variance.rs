//! Observation variances: plug-in posterior-mean estimates computed before
//! sampling, and Gibbs draws from the full conditionals during sampling.
//!
//! Inverse-gamma distributions here are parameterised by shape and *rate*:
//! `IG(a, b)` has density `∝ s^(-a-1) exp(-b / s)` and mean `b / (a - 1)`.
//! Draws are `1 / G` with `G ~ Gamma(shape = a, rate = b)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{for_each_observation, ChainState, Dataset, SeriesView};

/// How variances are obtained; the labels `s1`..`s4` name the samplers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// `s1`: plug-in estimate per series and time-point.
    FixedFree,
    /// `s2`: plug-in estimate per time-point, pooled over series.
    FixedShared,
    /// `s3`: Gibbs update per series and time-point.
    GibbsFree,
    /// `s4`: Gibbs update per time-point shared by all series. Experimental.
    GibbsShared,
}

impl VarianceMode {
    pub fn label(self) -> &'static str {
        match self {
            VarianceMode::FixedFree => "s1",
            VarianceMode::FixedShared => "s2",
            VarianceMode::GibbsFree => "s3",
            VarianceMode::GibbsShared => "s4",
        }
    }

    pub fn is_shared(self) -> bool {
        matches!(self, VarianceMode::FixedShared | VarianceMode::GibbsShared)
    }

    pub fn is_gibbs(self) -> bool {
        matches!(self, VarianceMode::GibbsFree | VarianceMode::GibbsShared)
    }
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s1" | "fixed_free" => Ok(VarianceMode::FixedFree),
            "s2" | "fixed_shared" => Ok(VarianceMode::FixedShared),
            "s3" | "gibbs_free" => Ok(VarianceMode::GibbsFree),
            "s4" | "gibbs_shared" => Ok(VarianceMode::GibbsShared),
            other => Err(Error::Config(format!(
                "unknown sampler '{other}', expected one of s1, s2, s3, s4"
            ))),
        }
    }
}

/// Inverse-gamma prior `IG(alpha0, beta0)` on the variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceConfig {
    pub alpha0: f64,
    pub beta0: f64,
    pub mode: VarianceMode,
}

impl VarianceConfig {
    pub const DEFAULT_ALPHA0: f64 = 1.0;
    pub const DEFAULT_BETA0: f64 = 1.0;

    pub fn new(mode: VarianceMode) -> Self {
        VarianceConfig {
            alpha0: Self::DEFAULT_ALPHA0,
            beta0: Self::DEFAULT_BETA0,
            mode,
        }
    }

    /// Validates the hyperparameters and, for the plug-in modes, that the
    /// posterior mean exists for a dataset of shape `n_series x _ x n_reps`.
    pub fn validate(&self, n_series: usize, n_reps: usize) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) || !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::Config(format!(
                "alpha0 and beta0 must be positive, got {} and {}",
                self.alpha0, self.beta0
            )));
        }
        let shape = match self.mode {
            VarianceMode::FixedFree => self.alpha0 + n_reps as f64 / 2.0,
            VarianceMode::FixedShared => self.alpha0 + (n_series * n_reps) as f64 / 2.0,
            _ => return Ok(()),
        };
        if shape <= 1.0 {
            return Err(Error::Config(format!(
                "posterior mean of the variance does not exist: shape {shape} <= 1 \
                 (increase alpha0 or the number of replicates)"
            )));
        }
        Ok(())
    }
}

/// Posterior sum-of-squares functional of one `(series, time)` cell:
/// `[R nu0 mu0^2 + (R + nu0) Σx² - (Σx)² - 2 nu0 mu0 Σx] / (2 (R + nu0))`.
///
/// Evaluated in the equivalent form
/// `½ [Σ(x - x̄)² + R nu0 / (R + nu0) (x̄ - mu0)²]`, which is never negative.
pub fn beta_hat(x: &[f64], mu0: f64, nu0: f64) -> f64 {
    let r = x.len() as f64;
    let mean = x.iter().sum::<f64>() / r;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let shrink = r * nu0 / (r + nu0) * (mean - mu0) * (mean - mu0);
    0.5 * (ss + shrink)
}

/// Plug-in estimate per series and time-point, flat `[series][time]`.
pub fn estimate_variance_free(
    data: &Dataset,
    mu0: &[f64],
    nu0: f64,
    cfg: &VarianceConfig,
) -> Result<Vec<f64>> {
    let free = VarianceConfig {
        mode: VarianceMode::FixedFree,
        ..*cfg
    };
    free.validate(data.n_series(), data.n_reps())?;
    let denom = cfg.alpha0 + data.n_reps() as f64 / 2.0 - 1.0;
    let mut out = Vec::with_capacity(data.n_series() * data.n_times());
    for n in 0..data.n_series() {
        let x = data.series(n);
        for t in 1..=data.n_times() {
            out.push((cfg.beta0 + beta_hat(x.at(t), mu0[t - 1], nu0)) / denom);
        }
    }
    Ok(out)
}

/// Plug-in estimate per time-point pooled over series; length `T`.
pub fn estimate_variance_shared(
    data: &Dataset,
    mu0: &[f64],
    nu0: f64,
    cfg: &VarianceConfig,
) -> Result<Vec<f64>> {
    let shared = VarianceConfig {
        mode: VarianceMode::FixedShared,
        ..*cfg
    };
    shared.validate(data.n_series(), data.n_reps())?;
    let denom = cfg.alpha0 + (data.n_series() * data.n_reps()) as f64 / 2.0 - 1.0;
    Ok((1..=data.n_times())
        .map(|t| {
            let pooled: f64 = (0..data.n_series())
                .map(|n| beta_hat(data.series(n).at(t), mu0[t - 1], nu0))
                .sum();
            (cfg.beta0 + pooled) / denom
        })
        .collect())
}

/// Repeats a per-time vector for every series.
pub fn broadcast_shared(shared: &[f64], n_series: usize) -> Vec<f64> {
    shared.iter().copied().cycle().take(shared.len() * n_series).collect()
}

/// Draws from `IG(shape, rate)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("inverse-gamma parameters must be positive");
    1.0 / g.sample(rng)
}

/// Shape of the full conditional of a free variance: `(R + 1) / 2 + alpha0`.
pub fn free_conditional_shape(n_reps: usize, alpha0: f64) -> f64 {
    (n_reps as f64 + 1.0) / 2.0 + alpha0
}

/// Shape of the full conditional of a shared variance:
/// `N (R + 1) / 2 + alpha0`.
pub fn shared_conditional_shape(n_series: usize, n_reps: usize, alpha0: f64) -> f64 {
    (n_series * (n_reps + 1)) as f64 / 2.0 + alpha0
}

/// Per-time rate contributions of one series: `½ Σ_r (x - mu(t))² +
/// (nu0 / 2) (theta_t - mu0_t)²`, without `beta0`.
fn rate_terms(x: SeriesView<'_>, state: &ChainState, mu0: &[f64], nu0: f64) -> Vec<f64> {
    let n_times = x.n_times();
    let mut rates: Vec<f64> = (0..n_times)
        .map(|i| 0.5 * nu0 * (state.theta[i] - mu0[i]).powi(2))
        .collect();
    for_each_observation(x, &state.theta, &state.tau, 1, n_times, |t, _, v, mu| {
        rates[t - 1] += 0.5 * (v - mu) * (v - mu);
    });
    rates
}

/// Full-conditional rates of the free variances of one series.
pub fn free_conditional_rates(
    x: SeriesView<'_>,
    state: &ChainState,
    mu0: &[f64],
    nu0: f64,
    beta0: f64,
) -> Vec<f64> {
    let mut rates = rate_terms(x, state, mu0, nu0);
    rates.iter_mut().for_each(|r| *r += beta0);
    rates
}

/// Gibbs step for the free variances of one series, written into `out`.
pub fn gibbs_update_variance_free<R: Rng + ?Sized>(
    x: SeriesView<'_>,
    state: &ChainState,
    mu0: &[f64],
    nu0: f64,
    cfg: &VarianceConfig,
    rng: &mut R,
    out: &mut [f64],
) {
    let shape = free_conditional_shape(x.n_reps(), cfg.alpha0);
    let rates = free_conditional_rates(x, state, mu0, nu0, cfg.beta0);
    for (o, rate) in out.iter_mut().zip(rates) {
        *o = sample_inverse_gamma(shape, rate, rng);
    }
}

/// Full-conditional rates of the shared variances given every series.
pub fn shared_conditional_rates(
    series: &[(SeriesView<'_>, &ChainState)],
    mu0: &[f64],
    nu0: f64,
    beta0: f64,
) -> Vec<f64> {
    let mut rates = vec![beta0; mu0.len()];
    for (x, state) in series {
        for (acc, r) in rates.iter_mut().zip(rate_terms(*x, state, mu0, nu0)) {
            *acc += r;
        }
    }
    rates
}

/// Gibbs step for the shared variances; needs the current state of every
/// series.
pub fn gibbs_update_variance_shared<R: Rng + ?Sized>(
    series: &[(SeriesView<'_>, &ChainState)],
    mu0: &[f64],
    nu0: f64,
    cfg: &VarianceConfig,
    rng: &mut R,
) -> Vec<f64> {
    let n_reps = series.first().map_or(1, |(x, _)| x.n_reps());
    let shape = shared_conditional_shape(series.len(), n_reps, cfg.alpha0);
    shared_conditional_rates(series, mu0, nu0, cfg.beta0)
        .into_iter()
        .map(|rate| sample_inverse_gamma(shape, rate, rng))
        .collect()
}
