//! End-to-end runs: resolve settings against a dataset, sample every series,
//! write traces and a manifest that can replay the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, TraceShape, VarianceTable};
use crate::model::Dataset;
use crate::orchestrate::{run_dataset, series_seeds};
use crate::priors::{EllPrior, PriorConfig};
use crate::sampler::{AcceptCounts, MoveTunables, SamplerConfig, Schedule, Trace};
use crate::variance::{estimate_variance_free, estimate_variance_shared, VarianceConfig, VarianceMode};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Where the plug-in or starting variances come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceSource {
    /// Estimated from the data: per series for `s1`/`s3`, pooled for `s2`/`s4`.
    Estimate,
    File { path: PathBuf },
}

/// Every setting of a run. `max_ell` and `d2` default from `T` when absent;
/// [`RunSettings::resolve`] fills them in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub data: PathBuf,
    pub sampler: VarianceMode,
    pub variances: VarianceSource,
    pub nu0: f64,
    /// Constant prior mean; the per-time-point grand mean when absent.
    pub mu0: Option<f64>,
    pub ell_prior: EllPrior,
    pub max_ell: Option<usize>,
    pub alpha0: f64,
    pub beta0: f64,
    pub c: f64,
    pub d1: usize,
    pub d2: Option<usize>,
    pub schedule: Schedule,
    #[serde(default)]
    pub prior_only: bool,
}

impl RunSettings {
    pub fn new(data: PathBuf, sampler: VarianceMode) -> Self {
        RunSettings {
            data,
            sampler,
            variances: VarianceSource::Estimate,
            nu0: PriorConfig::DEFAULT_NU0,
            mu0: None,
            ell_prior: EllPrior::complexity_default(),
            max_ell: None,
            alpha0: VarianceConfig::DEFAULT_ALPHA0,
            beta0: VarianceConfig::DEFAULT_BETA0,
            c: MoveTunables::DEFAULT_C,
            d1: MoveTunables::DEFAULT_D1,
            d2: None,
            schedule: Schedule::default(),
            prior_only: false,
        }
    }

    /// Applies one `key=value` setting from a config file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
        }
        match key {
            "sampler" => self.sampler = value.parse()?,
            "variances" => {
                self.variances = if value == "estimate" {
                    VarianceSource::Estimate
                } else {
                    VarianceSource::File { path: value.into() }
                }
            }
            "nu0" => self.nu0 = parse(key, value)?,
            "mu0" => self.mu0 = Some(parse(key, value)?),
            "ell_prior" => {
                self.ell_prior = match value {
                    "complexity" => EllPrior::complexity_default(),
                    "poisson" => EllPrior::poisson_default(),
                    _ => return Err(Error::Config(format!("ell_prior must be 'complexity' or 'poisson', got '{value}'"))),
                }
            }
            "alpha" | "b" => match &mut self.ell_prior {
                EllPrior::Complexity { alpha, b } => *(if key == "alpha" { alpha } else { b }) = parse(key, value)?,
                _ => return Err(Error::Config(format!("'{key}' applies to the complexity prior only"))),
            },
            "lambda" | "support_max" => match &mut self.ell_prior {
                EllPrior::TruncatedPoisson { lambda, support_max } => {
                    if key == "lambda" {
                        *lambda = parse(key, value)?;
                    } else {
                        *support_max = parse(key, value)?;
                    }
                }
                _ => return Err(Error::Config(format!("'{key}' applies to the poisson prior only"))),
            },
            "max_ell" => self.max_ell = Some(parse(key, value)?),
            "alpha0" => self.alpha0 = parse(key, value)?,
            "beta0" => self.beta0 = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "d1" => self.d1 = parse(key, value)?,
            "d2" => self.d2 = Some(parse(key, value)?),
            "iterations" => self.schedule.iterations = parse(key, value)?,
            "burn_in" => self.schedule.burn_in = parse(key, value)?,
            "thin" => self.schedule.thin = parse(key, value)?,
            "warmup" => self.schedule.warmup = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown run setting '{key}'"))),
        }
        Ok(())
    }

    /// Fills the length-dependent defaults.
    pub fn resolved(&self, n_times: usize) -> RunSettings {
        RunSettings {
            max_ell: Some(self.max_ell.unwrap_or(n_times.saturating_sub(2))),
            d2: Some(self.d2.unwrap_or_else(|| crate::sampler::default_d2(n_times))),
            ..self.clone()
        }
    }

    /// Builds the sampler configuration and starting variances for `data`.
    pub fn resolve(&self, data: &Dataset) -> Result<(SamplerConfig, Vec<f64>)> {
        let n_times = data.n_times();
        let r = self.resolved(n_times);
        let mu0 = match r.mu0 {
            Some(m) => vec![m; n_times],
            None => data.grand_means(),
        };
        let prior = PriorConfig::new(r.nu0, mu0, r.ell_prior, r.max_ell.unwrap_or(0))?;
        let variance = VarianceConfig {
            alpha0: r.alpha0,
            beta0: r.beta0,
            mode: r.sampler,
        };
        variance.validate(data.n_series(), data.n_reps())?;
        let cfg = SamplerConfig {
            prior,
            variance,
            tunables: MoveTunables {
                c: r.c,
                d1: r.d1,
                d2: r.d2.unwrap_or(1),
            },
            schedule: r.schedule,
            prior_only: r.prior_only,
        };
        cfg.validate()?;
        let sigma2 = match &r.variances {
            VarianceSource::File { path } => {
                io::read_variances(path, data.series_ids(), n_times)?.per_series(data.n_series())
            }
            VarianceSource::Estimate => {
                plug_in_variances(data, &cfg.prior.mu0, cfg.prior.nu0, &variance)?.per_series(data.n_series())
            }
        };
        Ok((cfg, sigma2))
    }
}

/// Plug-in variances matching the sampler's variance structure.
pub fn plug_in_variances(data: &Dataset, mu0: &[f64], nu0: f64, cfg: &VarianceConfig) -> Result<VarianceTable> {
    Ok(if cfg.mode.is_shared() {
        VarianceTable::Shared(estimate_variance_shared(data, mu0, nu0, cfg)?)
    } else {
        VarianceTable::Free(estimate_variance_free(data, mu0, nu0, cfg)?)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub index: usize,
    pub id: String,
    pub seed: u64,
    pub trace_file: String,
    pub theta_file: String,
    pub trace_sha256: String,
    pub theta_sha256: String,
    pub n_records: usize,
    pub accept_counts: AcceptCounts,
}

/// Everything needed to reproduce a run and read its traces back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub settings: RunSettings,
    pub data_sha256: String,
    pub variances_sha256: Option<String>,
    pub master_seed: u64,
    pub shape: TraceShape,
    pub series: Vec<SeriesEntry>,
}

/// Runs every series of `settings.data` and writes traces plus
/// `manifest.json` into `out_dir`.
pub fn execute_run(settings: &RunSettings, master_seed: u64, workers: usize, out_dir: &Path) -> Result<RunManifest> {
    let data = io::load_dataset(&settings.data)?;
    let (cfg, sigma2) = settings.resolve(&data)?;
    let traces = run_dataset(&data, &sigma2, &cfg, master_seed, workers)?;
    let seeds = series_seeds(master_seed, data.n_series());
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut series = Vec::with_capacity(traces.len());
    for (n, trace) in traces.iter().enumerate() {
        let (tp, thp) = io::trace_paths(out_dir, n);
        io::write_trace(&tp, &thp, trace)?;
        series.push(SeriesEntry {
            index: n,
            id: data.series_ids()[n].clone(),
            seed: seeds[n],
            trace_file: file_name(&tp),
            theta_file: file_name(&thp),
            trace_sha256: io::sha256_file(&tp)?,
            theta_sha256: io::sha256_file(&thp)?,
            n_records: trace.len(),
            accept_counts: trace.accept_counts,
        });
    }
    let variances_sha256 = match &settings.variances {
        VarianceSource::File { path } => Some(io::sha256_file(path)?),
        VarianceSource::Estimate => None,
    };
    let manifest = RunManifest {
        settings: settings.resolved(data.n_times()),
        data_sha256: io::sha256_file(&settings.data)?,
        variances_sha256,
        master_seed,
        shape: TraceShape {
            n_times: data.n_times(),
            max_ell: cfg.prior.max_ell,
            burn_in: cfg.schedule.burn_in,
            thin: cfg.schedule.thin,
        },
        series,
    };
    io::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Re-runs a manifest into `out_dir`, checking the inputs are unchanged.
pub fn replay(manifest: &RunManifest, workers: usize, out_dir: &Path) -> Result<RunManifest> {
    let digest = io::sha256_file(&manifest.settings.data)?;
    if digest != manifest.data_sha256 {
        return Err(Error::Data {
            path: manifest.settings.data.clone(),
            msg: "dataset changed since the manifest was written".into(),
        });
    }
    if let (VarianceSource::File { path }, Some(expected)) = (&manifest.settings.variances, &manifest.variances_sha256) {
        if &io::sha256_file(path)? != expected {
            return Err(Error::Data {
                path: path.clone(),
                msg: "variance file changed since the manifest was written".into(),
            });
        }
    }
    execute_run(&manifest.settings, manifest.master_seed, workers, out_dir)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads a run directory back: its manifest and every trace, in series order.
pub fn load_run(dir: &Path) -> Result<(RunManifest, Vec<Trace>)> {
    let manifest: RunManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
    let traces = manifest
        .series
        .iter()
        .map(|s| io::read_trace(&dir.join(&s.trace_file), &dir.join(&s.theta_file), manifest.shape, s.accept_counts))
        .collect::<Result<_>>()?;
    Ok((manifest, traces))
}
