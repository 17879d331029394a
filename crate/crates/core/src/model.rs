//! Data model, the continuous piecewise linear mean and the Gaussian
//! log-likelihood of one replicated series.
//!
//! Time indices are 1-based everywhere in the public API: a series of length
//! `T` has time-points `1..=T`, and change-points live strictly inside,
//! in `2..=T-1`.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `N` series of `T` time-points, each observed `R` times.
///
/// Values are stored flat in `[series][time][replicate]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    series_ids: Vec<String>,
    n_times: usize,
    n_reps: usize,
    values: Vec<f64>,
    variances: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        series_ids: Vec<String>,
        n_times: usize,
        n_reps: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if series_ids.is_empty() {
            return Err(Error::Domain("dataset has no series".into()));
        }
        if n_times < 3 {
            return Err(Error::Domain(format!(
                "series need at least 3 time-points, got {n_times}"
            )));
        }
        if n_reps == 0 {
            return Err(Error::Domain("series need at least one replicate".into()));
        }
        let expected = series_ids.len() * n_times * n_reps;
        if values.len() != expected {
            return Err(Error::Domain(format!(
                "expected {expected} values for N={} T={n_times} R={n_reps}, got {}",
                series_ids.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (n, t, r) = (
                i / (n_times * n_reps),
                (i / n_reps) % n_times,
                i % n_reps,
            );
            return Err(Error::Domain(format!(
                "non-finite value at series {} time {} replicate {}",
                series_ids[n],
                t + 1,
                r + 1
            )));
        }
        Ok(Dataset {
            series_ids,
            n_times,
            n_reps,
            values,
            variances: None,
        })
    }

    /// Attaches per-(series, time) variances, flat in `[series][time]` order.
    pub fn with_variances(mut self, variances: Vec<f64>) -> Result<Self> {
        if variances.len() != self.n_series() * self.n_times {
            return Err(Error::Domain(format!(
                "expected {} variances, got {}",
                self.n_series() * self.n_times,
                variances.len()
            )));
        }
        check_variances(&variances)?;
        self.variances = Some(variances);
        Ok(self)
    }

    pub fn n_series(&self) -> usize {
        self.series_ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_reps(&self) -> usize {
        self.n_reps
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn variances(&self) -> Option<&[f64]> {
        self.variances.as_deref()
    }

    /// Variances of series `n` (0-based), if attached.
    pub fn series_variances(&self, n: usize) -> Option<&[f64]> {
        self.variances
            .as_deref()
            .map(|v| &v[n * self.n_times..(n + 1) * self.n_times])
    }

    /// Observations of series `n` (0-based).
    pub fn series(&self, n: usize) -> SeriesView<'_> {
        let len = self.n_times * self.n_reps;
        SeriesView {
            x: &self.values[n * len..(n + 1) * len],
            n_times: self.n_times,
            n_reps: self.n_reps,
        }
    }

    /// Grand mean over series and replicates at every time-point: the
    /// default prior location of the mean parameters.
    pub fn grand_means(&self) -> Vec<f64> {
        let scale = (self.n_series() * self.n_reps) as f64;
        (1..=self.n_times)
            .map(|t| {
                (0..self.n_series())
                    .map(|n| self.series(n).at(t).iter().sum::<f64>())
                    .sum::<f64>()
                    / scale
            })
            .collect()
    }
}

/// Borrowed `T x R` block of one series.
#[derive(Clone, Copy, Debug)]
pub struct SeriesView<'a> {
    x: &'a [f64],
    n_times: usize,
    n_reps: usize,
}

impl<'a> SeriesView<'a> {
    /// Wraps a flat `[time][replicate]` slice.
    pub fn new(x: &'a [f64], n_times: usize, n_reps: usize) -> Result<Self> {
        if n_times == 0 || n_reps == 0 || x.len() != n_times * n_reps {
            return Err(Error::Domain(format!(
                "series block of length {} does not match T={n_times} R={n_reps}",
                x.len()
            )));
        }
        Ok(SeriesView { x, n_times, n_reps })
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_reps(&self) -> usize {
        self.n_reps
    }

    /// Replicates at time `t` (1-based).
    #[inline]
    pub fn at(&self, t: usize) -> &'a [f64] {
        &self.x[(t - 1) * self.n_reps..t * self.n_reps]
    }

    /// Replicate mean at time `t` (1-based).
    pub fn replicate_mean(&self, t: usize) -> f64 {
        self.at(t).iter().sum::<f64>() / self.n_reps as f64
    }
}

/// Sampler state of one series: the ordered change-points and a full-length
/// vector of mean parameters.
///
/// Only `theta` at `{1} ∪ tau ∪ {T}` enters the likelihood; the remaining
/// entries are carried so that adding or removing a change-point never
/// changes the dimension of the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    /// Change-point locations, 1-based, strictly increasing, inside `(1, T)`.
    pub tau: Vec<usize>,
    /// Mean parameter per time-point; `theta[t - 1]` belongs to time `t`.
    pub theta: Vec<f64>,
}

impl ChainState {
    pub fn new(tau: Vec<usize>, theta: Vec<f64>) -> Self {
        ChainState { tau, theta }
    }

    /// Number of change-points.
    #[inline]
    pub fn ell(&self) -> usize {
        self.tau.len()
    }

    pub fn n_times(&self) -> usize {
        self.theta.len()
    }

    /// Mean parameter at time `t` (1-based).
    #[inline]
    pub fn theta_at(&self, t: usize) -> f64 {
        self.theta[t - 1]
    }

    /// `{1} ∪ tau ∪ {T}` in increasing order.
    pub fn knots(&self) -> Vec<usize> {
        let mut k = Vec::with_capacity(self.tau.len() + 2);
        k.push(1);
        k.extend_from_slice(&self.tau);
        k.push(self.n_times());
        k
    }

    /// Mean parameters at the knots, the only ones the likelihood sees.
    pub fn active_theta(&self) -> Vec<f64> {
        self.knots().into_iter().map(|t| self.theta_at(t)).collect()
    }

    /// Checks ordering, bounds and the `ell <= max_ell` cap.
    pub fn validate(&self, max_ell: usize) -> Result<()> {
        let n_times = self.n_times();
        if n_times < 3 {
            return Err(Error::Domain(format!(
                "state needs at least 3 time-points, got {n_times}"
            )));
        }
        if self.ell() > max_ell {
            return Err(Error::Domain(format!(
                "{} change-points exceed the maximum {max_ell}",
                self.ell()
            )));
        }
        if !tau_is_valid(&self.tau, n_times) {
            return Err(Error::Domain(format!(
                "change-points {:?} are not strictly increasing inside (1, {n_times})",
                self.tau
            )));
        }
        if let Some(t) = self.theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("theta at time {} is not finite", t + 1)));
        }
        Ok(())
    }
}

/// `1 < tau[0] < tau[1] < ... < T`.
pub fn tau_is_valid(tau: &[usize], n_times: usize) -> bool {
    let mut prev = 1;
    for &t in tau {
        if t <= prev {
            return false;
        }
        prev = t;
    }
    prev < n_times || tau.is_empty()
}

pub(crate) fn check_variances(sigma2: &[f64]) -> Result<()> {
    match sigma2.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
        Some(t) => Err(Error::Domain(format!(
            "variance at index {t} must be positive and finite, got {}",
            sigma2[t]
        ))),
        None => Ok(()),
    }
}

/// Value at `t` of the line through `(a, ya)` and `(b, yb)`, exact at both
/// ends.
#[inline]
fn interpolate(a: usize, ya: f64, b: usize, yb: f64, t: usize) -> f64 {
    if t == a {
        return ya;
    }
    if t == b {
        return yb;
    }
    let w = (t - a) as f64 / (b - a) as f64;
    ya + (yb - ya) * w
}

/// Index `j` of the knot with `knots[j] <= t < knots[j + 1]`, where the knots
/// are `1, tau.., T`. Returns the last segment for `t == T`.
#[inline]
fn segment_start(tau: &[usize], t: usize) -> usize {
    // number of change-points <= t
    tau.partition_point(|&c| c <= t)
}

#[inline]
fn knot(tau: &[usize], n_times: usize, j: usize) -> usize {
    if j == 0 {
        1
    } else if j <= tau.len() {
        tau[j - 1]
    } else {
        n_times
    }
}

/// Piecewise linear mean `mu(t; theta, tau)`.
pub fn piecewise_mean(t: usize, state: &ChainState) -> Result<f64> {
    let n_times = state.n_times();
    if t < 1 || t > n_times {
        return Err(Error::Domain(format!(
            "time index {t} outside 1..={n_times}"
        )));
    }
    Ok(mean_at(&state.theta, &state.tau, t))
}

#[inline]
pub(crate) fn mean_at(theta: &[f64], tau: &[usize], t: usize) -> f64 {
    let n_times = theta.len();
    let j = segment_start(tau, t).min(tau.len());
    let a = knot(tau, n_times, j);
    let b = knot(tau, n_times, j + 1);
    interpolate(a, theta[a - 1], b, theta[b - 1], t)
}

/// Calls `f(t, mu(t))` for every `t` in `lo..=hi`, walking segment by
/// segment.
pub(crate) fn for_each_mean(
    theta: &[f64],
    tau: &[usize],
    lo: usize,
    hi: usize,
    mut f: impl FnMut(usize, f64),
) {
    let n_times = theta.len();
    debug_assert!(lo >= 1 && hi <= n_times);
    if lo > hi {
        return;
    }
    let mut j = segment_start(tau, lo).min(tau.len());
    let mut t = lo;
    while t <= hi {
        let a = knot(tau, n_times, j);
        let b = knot(tau, n_times, j + 1);
        let (ya, yb) = (theta[a - 1], theta[b - 1]);
        let end = b.min(hi);
        while t <= end {
            f(t, interpolate(a, ya, b, yb, t));
            t += 1;
        }
        j += 1;
    }
}

/// The full mean curve `mu(1..=T)`.
pub fn mean_curve(state: &ChainState) -> Vec<f64> {
    let mut out = Vec::with_capacity(state.n_times());
    for_each_mean(&state.theta, &state.tau, 1, state.n_times(), |_, m| {
        out.push(m)
    });
    out
}

/// `ln N(x; mu, s2)`.
#[inline]
pub fn log_normal_density(x: f64, mu: f64, s2: f64) -> f64 {
    let d = x - mu;
    -0.5 * (LN_2PI + s2.ln() + d * d / s2)
}

/// Calls `f(t, r, x_tr, mu(t))` once per observation with `t` in `lo..=hi`.
pub(crate) fn for_each_observation(
    x: SeriesView<'_>,
    theta: &[f64],
    tau: &[usize],
    lo: usize,
    hi: usize,
    mut f: impl FnMut(usize, usize, f64, f64),
) {
    for_each_mean(theta, tau, lo, hi, |t, mu| {
        for (r, &v) in x.at(t).iter().enumerate() {
            f(t, r + 1, v, mu);
        }
    });
}

/// Log-likelihood of the observations at times `lo..=hi`. Variances are
/// assumed validated.
pub(crate) fn log_likelihood_range(
    x: SeriesView<'_>,
    theta: &[f64],
    tau: &[usize],
    sigma2: &[f64],
    lo: usize,
    hi: usize,
) -> f64 {
    let mut acc = 0.0;
    for_each_mean(theta, tau, lo, hi, |t, mu| {
        let s2 = sigma2[t - 1];
        let ss: f64 = x.at(t).iter().map(|&v| (v - mu) * (v - mu)).sum();
        acc += -0.5 * (x.n_reps() as f64 * (LN_2PI + s2.ln()) + ss / s2);
    });
    acc
}

fn check_dims(x: SeriesView<'_>, state: &ChainState, sigma2: &[f64]) -> Result<()> {
    if state.n_times() != x.n_times() || sigma2.len() != x.n_times() {
        return Err(Error::Domain(format!(
            "dimension mismatch: data T={}, theta T={}, variances T={}",
            x.n_times(),
            state.n_times(),
            sigma2.len()
        )));
    }
    check_variances(sigma2)
}

/// Gaussian log-likelihood of one series given its state and variances.
pub fn log_likelihood(x: SeriesView<'_>, state: &ChainState, sigma2: &[f64]) -> Result<f64> {
    check_dims(x, state, sigma2)?;
    Ok(log_likelihood_range(
        x,
        &state.theta,
        &state.tau,
        sigma2,
        1,
        x.n_times(),
    ))
}

/// `log_likelihood(after) - log_likelihood(before)`, recomputed only over
/// `changed`.
///
/// `changed` must be bracketed by knots shared by both states: its endpoints
/// are knots (or boundaries) of both, with equal `theta`, and the two states
/// agree on every knot and knot value outside it. When that does not hold the
/// difference is recomputed over the whole series.
pub fn log_likelihood_delta(
    x: SeriesView<'_>,
    before: &ChainState,
    after: &ChainState,
    sigma2: &[f64],
    changed: RangeInclusive<usize>,
) -> Result<f64> {
    check_dims(x, before, sigma2)?;
    check_dims(x, after, sigma2)?;
    let n_times = x.n_times();
    let (lo, hi) = (*changed.start(), *changed.end());
    let (lo, hi) = if range_is_consistent(before, after, lo, hi) {
        (lo, hi)
    } else {
        (1, n_times)
    };
    let old = log_likelihood_range(x, &before.theta, &before.tau, sigma2, lo, hi);
    let new = log_likelihood_range(x, &after.theta, &after.tau, sigma2, lo, hi);
    Ok(new - old)
}

fn range_is_consistent(a: &ChainState, b: &ChainState, lo: usize, hi: usize) -> bool {
    let n_times = a.n_times();
    if lo < 1 || hi > n_times || lo > hi {
        return false;
    }
    if lo == 1 && hi == n_times {
        return true;
    }
    let is_knot = |s: &ChainState, t: usize| t == 1 || t == n_times || s.tau.binary_search(&t).is_ok();
    if !(is_knot(a, lo) && is_knot(b, lo) && is_knot(a, hi) && is_knot(b, hi)) {
        return false;
    }
    let outside = |s: &ChainState| -> Vec<(usize, u64)> {
        s.knots()
            .into_iter()
            .filter(|&t| t <= lo || t >= hi)
            .map(|t| (t, s.theta_at(t).to_bits()))
            .collect()
    };
    outside(a) == outside(b)
}
