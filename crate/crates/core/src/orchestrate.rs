//! Runs the chains of every series of a dataset.
//!
//! Series `n` draws from its own stream seeded by `derive_seed(master, n)`,
//! so results do not depend on the number of workers or on scheduling. The
//! shared-variance Gibbs sampler steps all chains once, then redraws the
//! common variances from a dedicated stream before the next sweep.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ChainState, Dataset, SeriesView};
use crate::sampler::{run_series, Chain, SamplerConfig, Trace};
use crate::seeds::{derive_seed, stream_rng};
use crate::variance::{gibbs_update_variance_shared, VarianceMode};

pub const WORKERS_ENV: &str = "SLOPECP_WORKERS";

/// Stream index of the shared variance draws.
pub const SHARED_STREAM: u64 = u64::MAX;

/// Per-series seeds under `master`.
pub fn series_seeds(master: u64, n_series: usize) -> Vec<u64> {
    (0..n_series as u64).map(|n| derive_seed(master, n)).collect()
}

/// Worker count from an explicit value, else the environment, else all cores.
pub fn resolve_workers(explicit: Option<usize>) -> Result<usize> {
    if let Some(w) = explicit {
        return if w == 0 {
            Err(Error::Config("worker count must be at least 1".into()))
        } else {
            Ok(w)
        };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs every series.
///
/// `sigma2` is flat `[series][time]`: the fixed variances of `s1`/`s2`, or
/// the starting values of `s3`/`s4`.
pub fn run_dataset(data: &Dataset, sigma2: &[f64], cfg: &SamplerConfig, master_seed: u64, workers: usize) -> Result<Vec<Trace>> {
    cfg.validate()?;
    let (n_series, n_times) = (data.n_series(), data.n_times());
    if sigma2.len() != n_series * n_times {
        return Err(Error::Config(format!(
            "expected {} variances, got {}",
            n_series * n_times,
            sigma2.len()
        )));
    }
    let pool = pool(workers)?;
    if cfg.variance.mode == VarianceMode::GibbsShared {
        return pool.install(|| run_shared_gibbs(data, &sigma2[..n_times], cfg, master_seed));
    }
    pool.install(|| {
        (0..n_series)
            .into_par_iter()
            .map(|n| {
                let s = sigma2[n * n_times..(n + 1) * n_times].to_vec();
                run_series(data.series(n), s, cfg, stream_rng(master_seed, n as u64))
            })
            .collect()
    })
}

fn shared_update(chains: &mut [Chain<'_>], cfg: &SamplerConfig, rng: &mut rand_chacha::ChaCha8Rng) {
    let pairs: Vec<(SeriesView<'_>, &ChainState)> = chains.iter().map(|c| (c.series(), c.state())).collect();
    let sigma2 = gibbs_update_variance_shared(&pairs, &cfg.prior.mu0, cfg.prior.nu0, &cfg.variance, rng);
    chains.par_iter_mut().for_each(|c| c.set_variances(sigma2.clone()));
}

/// Sweep-synchronised sampler with one variance vector shared by all series.
/// The first `warmup` sweeps keep the starting variances fixed.
fn run_shared_gibbs(data: &Dataset, sigma2: &[f64], cfg: &SamplerConfig, master_seed: u64) -> Result<Vec<Trace>> {
    let mut chains: Vec<Chain<'_>> = (0..data.n_series())
        .map(|n| Chain::new(data.series(n), sigma2.to_vec(), cfg, stream_rng(master_seed, n as u64)))
        .collect::<Result<_>>()?;
    let mut shared_rng = stream_rng(master_seed, SHARED_STREAM);
    for _ in 0..cfg.schedule.warmup {
        chains.par_iter_mut().for_each(|c| {
            c.step();
        });
    }
    let sched = cfg.schedule;
    let mut traces: Vec<Trace> = (0..chains.len())
        .map(|_| Trace::new(data.n_times(), cfg.prior.max_ell, sched.burn_in, sched.thin))
        .collect();
    for iter in 1..=sched.iterations {
        chains.par_iter_mut().zip(traces.par_iter_mut()).for_each(|(c, tr)| {
            let accepts = c.step();
            tr.accept_counts.add(accepts);
            if tr.should_record(iter) {
                tr.records.push(c.record(iter, accepts));
            }
        });
        shared_update(&mut chains, cfg, &mut shared_rng);
    }
    Ok(traces)
}
