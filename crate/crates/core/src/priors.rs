//! Prior densities on the mean parameters, the change-point locations and
//! the number of change-points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_variances, tau_is_valid, LN_2PI};

/// Prior on the number of change-points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EllPrior {
    /// `f(l) ∝ exp(-alpha * l * ln(b * T* / l))`, `T* = T - 2`.
    Complexity { alpha: f64, b: f64 },
    /// Poisson(`lambda`) restricted to `0..=support_max`.
    TruncatedPoisson { lambda: f64, support_max: usize },
}

impl EllPrior {
    pub const DEFAULT_ALPHA: f64 = 2.0;
    pub const DEFAULT_B: f64 = 3.72;

    pub fn complexity_default() -> Self {
        EllPrior::Complexity {
            alpha: Self::DEFAULT_ALPHA,
            b: Self::DEFAULT_B,
        }
    }

    pub fn poisson_default() -> Self {
        EllPrior::TruncatedPoisson {
            lambda: 1.0,
            support_max: 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EllPrior::Complexity { alpha, b } => {
                if !(alpha > 0.0 && alpha.is_finite()) || !(b > 0.0 && b.is_finite()) {
                    return Err(Error::Config(format!(
                        "complexity prior needs alpha > 0 and b > 0, got alpha={alpha} b={b}"
                    )));
                }
            }
            EllPrior::TruncatedPoisson { lambda, .. } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::Config(format!(
                        "poisson prior needs lambda > 0, got {lambda}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Hyperparameters of the priors for one dataset of length `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Precision scale of the mean prior: `theta_t ~ N(mu0_t, sigma2_t / nu0)`.
    pub nu0: f64,
    /// Prior mean per time-point.
    pub mu0: Vec<f64>,
    pub ell_prior: EllPrior,
    /// Maximum number of change-points, at most `T - 2`.
    pub max_ell: usize,
}

impl PriorConfig {
    pub const DEFAULT_NU0: f64 = 0.1;

    pub fn new(nu0: f64, mu0: Vec<f64>, ell_prior: EllPrior, max_ell: usize) -> Result<Self> {
        let cfg = PriorConfig {
            nu0,
            mu0,
            ell_prior,
            max_ell,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_times(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu0 > 0.0 && self.nu0.is_finite()) {
            return Err(Error::Config(format!("nu0 must be positive, got {}", self.nu0)));
        }
        let n_times = self.n_times();
        if n_times < 3 {
            return Err(Error::Config(format!(
                "prior means cover {n_times} time-points, need at least 3"
            )));
        }
        if self.max_ell > n_times - 2 {
            return Err(Error::Config(format!(
                "maximum number of change-points {} exceeds T - 2 = {}",
                self.max_ell,
                n_times - 2
            )));
        }
        if self.mu0.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("prior means must be finite".into()));
        }
        self.ell_prior.validate()
    }
}

/// `sum_t ln N(theta_t; mu0_t, sigma2_t / nu0)`.
pub fn log_prior_theta(theta: &[f64], sigma2: &[f64], cfg: &PriorConfig) -> Result<f64> {
    if theta.len() != cfg.n_times() || sigma2.len() != cfg.n_times() {
        return Err(Error::Domain(format!(
            "theta ({}) and variances ({}) must have length T = {}",
            theta.len(),
            sigma2.len(),
            cfg.n_times()
        )));
    }
    check_variances(sigma2)?;
    Ok(log_prior_theta_unchecked(theta, sigma2, &cfg.mu0, cfg.nu0))
}

#[inline]
pub(crate) fn log_prior_theta_term(theta: f64, sigma2: f64, mu0: f64, nu0: f64) -> f64 {
    let v = sigma2 / nu0;
    let d = theta - mu0;
    -0.5 * (LN_2PI + v.ln() + d * d / v)
}

pub(crate) fn log_prior_theta_unchecked(theta: &[f64], sigma2: &[f64], mu0: &[f64], nu0: f64) -> f64 {
    theta
        .iter()
        .zip(sigma2)
        .zip(mu0)
        .map(|((&th, &s2), &m)| log_prior_theta_term(th, s2, m, nu0))
        .sum()
}

/// Log prior of change-point locations given their number.
///
/// The first location is uniform on `2..=T-l`, and each following one is
/// uniform between its predecessor plus one and `T - l + j - 1`, which favours
/// configurations late in the series. Returns `-inf` for any configuration
/// outside `1 < t_1 < ... < t_l < T`, and `0` for the empty configuration.
pub fn log_prior_tau(tau: &[usize], n_times: usize) -> f64 {
    if !tau_is_valid(tau, n_times) {
        return f64::NEG_INFINITY;
    }
    let ell = tau.len();
    if ell == 0 {
        return 0.0;
    }
    let base = n_times - ell;
    let mut lp = -((base - 1) as f64).ln();
    for j in 2..=ell {
        // support size T - l + j - 1 - t_{j-1}, positive for valid tau
        let width = base + j - 1 - tau[j - 2];
        lp -= (width as f64).ln();
    }
    lp
}

/// Unnormalised log prior of the number of change-points.
///
/// Errors when `ell` exceeds the configured maximum. The truncated Poisson
/// prior returns `-inf` beyond its support.
pub fn log_prior_ell(ell: usize, n_times: usize, prior: &EllPrior, max_ell: usize) -> Result<f64> {
    if ell > max_ell {
        return Err(Error::Domain(format!(
            "{ell} change-points exceed the maximum {max_ell}"
        )));
    }
    Ok(log_prior_ell_unchecked(ell, n_times, prior))
}

pub(crate) fn log_prior_ell_unchecked(ell: usize, n_times: usize, prior: &EllPrior) -> f64 {
    match *prior {
        EllPrior::Complexity { alpha, b } => {
            if ell == 0 {
                return 0.0;
            }
            let l = ell as f64;
            let t_star = n_times.saturating_sub(2) as f64;
            -alpha * l * (b * t_star / l).ln()
        }
        EllPrior::TruncatedPoisson {
            lambda,
            support_max,
        } => {
            if ell > support_max {
                return f64::NEG_INFINITY;
            }
            let l = ell as f64;
            l * lambda.ln() - lambda - ln_factorial(ell)
        }
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Normalised prior pmf over `0..=max_ell`.
pub fn ell_prior_pmf(n_times: usize, prior: &EllPrior, max_ell: usize) -> Vec<f64> {
    let logs: Vec<f64> = (0..=max_ell)
        .map(|l| log_prior_ell_unchecked(l, n_times, prior))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&lp| (lp - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Outcome of [`check_exponential_decrease`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecreaseCheck {
    pub holds: bool,
    /// Largest `P(l) / P(l-1)` over the checked range; the smallest `D` that
    /// works. `None` when the range is empty.
    pub max_ratio: Option<f64>,
    /// The `l` attaining `max_ratio`.
    pub argmax: Option<usize>,
    /// First `l` checked.
    pub from: usize,
    pub to: usize,
}

/// Checks `P(l) <= D * P(l-1)` with `D < 1` for every `l` in
/// `(c * ell_star, max_ell]`.
pub fn check_exponential_decrease(
    prior: &EllPrior,
    n_times: usize,
    max_ell: usize,
    ell_star: usize,
    c: f64,
) -> DecreaseCheck {
    let from = ((c * ell_star as f64).floor() as usize + 1).max(1);
    let mut best: Option<(usize, f64)> = None;
    for ell in from..=max_ell {
        let log_ratio = log_prior_ell_unchecked(ell, n_times, prior)
            - log_prior_ell_unchecked(ell - 1, n_times, prior);
        let ratio = log_ratio.exp();
        if best.is_none_or(|(_, r)| ratio > r) {
            best = Some((ell, ratio));
        }
    }
    DecreaseCheck {
        holds: best.is_none_or(|(_, r)| r < 1.0),
        max_ratio: best.map(|(_, r)| r),
        argmax: best.map(|(l, _)| l),
        from,
        to: max_ell,
    }
}
