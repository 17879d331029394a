//! Posterior summaries of a trace and benchmark scoring.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{Trace, TraceRecord};
use crate::synthetic::SeriesTruth;

pub const DEFAULT_BAND_SDS: f64 = 2.0;

/// Empirical distribution of one change-point given the MAP count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationMarginal {
    /// 1-based change-point index.
    pub index: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    /// `(time, count)` pairs in increasing time.
    pub histogram: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub series_id: String,
    pub n_records: usize,
    /// Empirical pmf of the number of change-points over `0..=max_ell`.
    pub ell_posterior: Vec<f64>,
    pub ell_map: usize,
    pub location_marginals: Vec<LocationMarginal>,
    pub z_probs: Vec<f64>,
    pub fitted_mean: Vec<f64>,
    pub fitted_lower: Vec<f64>,
    pub fitted_upper: Vec<f64>,
}

fn require_records(trace: &Trace) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::Summary("trace has no recorded iterations".into()));
    }
    Ok(())
}

pub fn ell_posterior(trace: &Trace) -> Result<Vec<f64>> {
    require_records(trace)?;
    let top = trace.records.iter().map(TraceRecord::ell).max().unwrap_or(0);
    let mut pmf = vec![0.0; trace.max_ell.max(top) + 1];
    for r in &trace.records {
        pmf[r.ell()] += 1.0;
    }
    let n = trace.len() as f64;
    pmf.iter_mut().for_each(|p| *p /= n);
    Ok(pmf)
}

/// Mode of the number of change-points; ties go to the smaller count.
pub fn map_ell(trace: &Trace) -> Result<usize> {
    require_records(trace)?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &trace.records {
        *counts.entry(r.ell()).or_default() += 1;
    }
    let mut best = (0, 0);
    for (&ell, &c) in &counts {
        if c > best.1 {
            best = (ell, c);
        }
    }
    Ok(best.0)
}

fn conditioned(trace: &Trace, ell_map: usize) -> Result<Vec<&TraceRecord>> {
    let kept: Vec<_> = trace.records.iter().filter(|r| r.ell() == ell_map).collect();
    if kept.is_empty() {
        return Err(Error::Summary(format!(
            "no recorded iteration has ell = {ell_map} to condition on"
        )));
    }
    Ok(kept)
}

/// Type-7 quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn conditional_location_marginals(trace: &Trace, ell_map: usize) -> Result<Vec<LocationMarginal>> {
    let kept = conditioned(trace, ell_map)?;
    Ok((0..ell_map)
        .map(|j| {
            let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
            for r in &kept {
                *hist.entry(r.tau[j]).or_default() += 1;
            }
            let mut v: Vec<f64> = kept.iter().map(|r| r.tau[j] as f64).collect();
            v.sort_by(f64::total_cmp);
            LocationMarginal {
                index: j + 1,
                min: v[0],
                q25: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q75: quantile(&v, 0.75),
                max: v[v.len() - 1],
                histogram: hist.into_iter().collect(),
            }
        })
        .collect())
}

/// Per time-point count of conditioned iterations placing a change-point
/// there, and the number of conditioned iterations.
pub fn z_counts(trace: &Trace, ell_map: usize) -> Result<(Vec<usize>, usize)> {
    let kept = conditioned(trace, ell_map)?;
    let mut counts = vec![0usize; trace.n_times];
    for r in &kept {
        for &t in &r.tau {
            counts[t - 1] += 1;
        }
    }
    Ok((counts, kept.len()))
}

/// Per time-point share of conditioned iterations placing a change-point there.
pub fn z_probabilities(trace: &Trace, ell_map: usize) -> Result<Vec<f64>> {
    let (counts, n) = z_counts(trace, ell_map)?;
    Ok(counts.into_iter().map(|c| c as f64 / n as f64).collect())
}

/// Posterior mean of the mean curve and a band of `sds` posterior standard
/// deviations around it.
pub fn fitted_mean_band(trace: &Trace, sds: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    require_records(trace)?;
    let n_times = trace.n_times;
    let mut sum = vec![0.0; n_times];
    let mut sum_sq = vec![0.0; n_times];
    let n = trace.len() as f64;
    // shifted sums keep the variance stable for large offsets
    let shift = trace.records[0].mean_curve(n_times);
    for r in &trace.records {
        for (t, mu) in r.mean_curve(n_times).into_iter().enumerate() {
            let d = mu - shift[t];
            sum[t] += d;
            sum_sq[t] += d * d;
        }
    }
    let mut mean = Vec::with_capacity(n_times);
    let mut lower = Vec::with_capacity(n_times);
    let mut upper = Vec::with_capacity(n_times);
    for t in 0..n_times {
        let m = sum[t] / n;
        let var = (sum_sq[t] / n - m * m).max(0.0);
        let centre = shift[t] + m;
        mean.push(centre);
        lower.push(centre - sds * var.sqrt());
        upper.push(centre + sds * var.sqrt());
    }
    Ok((mean, lower, upper))
}

pub fn summarize(series_id: &str, trace: &Trace, band_sds: f64) -> Result<SeriesSummary> {
    let ell_map = map_ell(trace)?;
    let (fitted_mean, fitted_lower, fitted_upper) = fitted_mean_band(trace, band_sds)?;
    Ok(SeriesSummary {
        series_id: series_id.to_string(),
        n_records: trace.len(),
        ell_posterior: ell_posterior(trace)?,
        ell_map,
        location_marginals: conditional_location_marginals(trace, ell_map)?,
        z_probs: z_probabilities(trace, ell_map)?,
        fitted_mean,
        fitted_lower,
        fitted_upper,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumScore {
    pub ell: usize,
    pub n: usize,
    pub mae: f64,
    /// Sample standard deviation over `sqrt(n)`; absent for a single series.
    pub se: Option<f64>,
    pub exact_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScore {
    pub strata: Vec<StratumScore>,
    /// Count of series per signed error `ell_map - ell`.
    pub error_histogram: BTreeMap<i64, usize>,
}

impl BenchmarkScore {
    pub fn exact_fraction(&self) -> f64 {
        let n: usize = self.strata.iter().map(|s| s.n).sum();
        let hits: f64 = self.strata.iter().map(|s| s.exact_fraction * s.n as f64).sum();
        hits / n as f64
    }
}

/// Scores MAP counts keyed by series id against the truth.
pub fn score_benchmark(estimates: &BTreeMap<String, usize>, truth: &[SeriesTruth]) -> Result<BenchmarkScore> {
    let truth_ids: BTreeSet<&str> = truth.iter().map(|s| s.id.as_str()).collect();
    if truth_ids.len() != truth.len() {
        return Err(Error::Summary("ground truth lists a series id twice".into()));
    }
    let est_ids: BTreeSet<&str> = estimates.keys().map(String::as_str).collect();
    if est_ids != truth_ids {
        let missing: Vec<_> = truth_ids.symmetric_difference(&est_ids).take(3).collect();
        return Err(Error::Summary(format!(
            "series ids of summaries and ground truth differ, e.g. {missing:?}"
        )));
    }
    let mut errors: BTreeMap<usize, Vec<i64>> = BTreeMap::new();
    let mut error_histogram = BTreeMap::new();
    for s in truth {
        let e = estimates[&s.id] as i64 - s.ell() as i64;
        errors.entry(s.ell()).or_default().push(e);
        *error_histogram.entry(e).or_default() += 1;
    }
    let strata = errors
        .into_iter()
        .map(|(ell, errs)| {
            let n = errs.len();
            let abs: Vec<f64> = errs.iter().map(|e| e.abs() as f64).collect();
            let mae = abs.iter().sum::<f64>() / n as f64;
            let se = (n > 1).then(|| {
                let var = abs.iter().map(|a| (a - mae).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            });
            StratumScore {
                ell,
                n,
                mae,
                se,
                exact_fraction: errs.iter().filter(|&&e| e == 0).count() as f64 / n as f64,
            }
        })
        .collect();
    Ok(BenchmarkScore { strata, error_histogram })
}
