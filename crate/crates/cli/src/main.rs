use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slopecp::io::{self, VarianceTable};
use slopecp::orchestrate::resolve_workers;
use slopecp::priors::{check_exponential_decrease, ell_prior_pmf, EllPrior};
use slopecp::run::{self, plug_in_variances, RunManifest, RunSettings, VarianceSource};
use slopecp::summary::{score_benchmark, summarize, DEFAULT_BAND_SDS};
use slopecp::synthetic::{simulate_dataset, SimScenario};
use slopecp::variance::{VarianceConfig, VarianceMode};
use slopecp::{Error, Result};

/// Change-points in the slope of replicated time series.
#[derive(Parser)]
#[command(name = "slopecp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known change-points.
    Simulate(SimulateArgs),
    /// Plug-in posterior-mean estimates of the observation variances.
    EstimateVariance(EstimateArgs),
    /// Sample the posterior of every series.
    Run(RunArgs),
    /// Summarise the traces of a run.
    Summarize(SummarizeArgs),
    /// Score summaries against ground truth.
    Evaluate(EvaluateArgs),
    /// Inspect the prior on the number of change-points.
    CheckPriors(CheckPriorsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file of key=value lines.
    config: Option<PathBuf>,
    /// Output dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output ground-truth CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Output CSV of the true variances.
    #[arg(long)]
    true_variances: Option<PathBuf>,
    /// Echo of the effective scenario.
    #[arg(long)]
    echo: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario override, e.g. `--set n_times=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EstimateArgs {
    data: PathBuf,
    #[arg(long, value_parser = ["free", "shared"])]
    mode: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = slopecp::priors::PriorConfig::DEFAULT_NU0)]
    nu0: f64,
    /// Constant prior mean; the per-time-point grand mean by default.
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long, default_value_t = VarianceConfig::DEFAULT_ALPHA0)]
    alpha0: f64,
    #[arg(long, default_value_t = VarianceConfig::DEFAULT_BETA0)]
    beta0: f64,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset CSV. Not needed with --manifest.
    data: Option<PathBuf>,
    /// s1 (fixed free), s2 (fixed shared), s3 (Gibbs free), s4 (Gibbs shared, experimental).
    #[arg(long)]
    sampler: Option<VarianceMode>,
    /// Output directory for traces and the manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Variance CSV from `estimate-variance`.
    #[arg(long, conflicts_with = "fuse")]
    variances: Option<PathBuf>,
    /// Estimate the variances from the data as part of the run.
    #[arg(long)]
    fuse: bool,
    /// Run settings file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Setting override, e.g. `--set iterations=5000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replay the run recorded in a manifest.
    #[arg(long, conflicts_with_all = ["data", "sampler", "variances", "fuse", "config", "overrides"])]
    manifest: Option<PathBuf>,
    /// Worker threads; defaults to $SLOPECP_WORKERS, then to all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, hide = true)]
    prior_only: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Run directory written by `run`.
    run: PathBuf,
    /// Output directory for summaries.json and plot data.
    #[arg(long)]
    out: PathBuf,
    /// Half-width of the fitted band in posterior standard deviations.
    #[arg(long, default_value_t = DEFAULT_BAND_SDS)]
    band_sds: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    summaries: PathBuf,
    truth: PathBuf,
    /// Output MAE table.
    #[arg(long)]
    out: PathBuf,
    /// Output signed-error histogram; next to the table by default.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args)]
struct CheckPriorsArgs {
    #[arg(long)]
    n_times: usize,
    /// Use the truncated Poisson prior instead of the complexity prior.
    #[arg(long)]
    poisson: bool,
    #[arg(long, default_value_t = EllPrior::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = EllPrior::DEFAULT_B)]
    b: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 30)]
    support_max: usize,
    /// Largest number of change-points; T - 2 by default.
    #[arg(long)]
    max_ell: Option<usize>,
    /// Reference number of change-points.
    #[arg(long, default_value_t = 1)]
    ell_star: usize,
    /// Decrease is checked for counts above `c * ell_star`.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
}

fn key_value(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got '{s}'")))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut sc = SimScenario::default();
    if let Some(path) = &a.config {
        for (k, v) in io::read_key_values(path)? {
            sc.set(&k, &v)?;
        }
    }
    for o in &a.overrides {
        let (k, v) = key_value(o)?;
        sc.set(k, v)?;
    }
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    let (data, truth) = simulate_dataset(&sc)?;
    io::write_dataset(&a.data, &data)?;
    io::write_truth(&a.truth, &truth.series)?;
    if let Some(p) = &a.true_variances {
        io::write_variances(p, data.series_ids(), data.n_times(), &VarianceTable::Free(truth.variances))?;
    }
    if let Some(p) = &a.echo {
        std::fs::write(p, sc.to_config_string()).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    println!(
        "wrote {} series of T={} R={} to {}",
        data.n_series(),
        data.n_times(),
        data.n_reps(),
        a.data.display()
    );
    Ok(())
}

fn estimate_variance(a: EstimateArgs) -> Result<()> {
    let data = io::load_dataset(&a.data)?;
    let mode = if a.mode == "shared" {
        VarianceMode::FixedShared
    } else {
        VarianceMode::FixedFree
    };
    let mu0 = match a.mu0 {
        Some(m) => vec![m; data.n_times()],
        None => data.grand_means(),
    };
    if a.nu0.is_nan() || a.nu0 <= 0.0 {
        return Err(Error::Config(format!("nu0 must be positive, got {}", a.nu0)));
    }
    let cfg = VarianceConfig {
        alpha0: a.alpha0,
        beta0: a.beta0,
        mode,
    };
    let table = plug_in_variances(&data, &mu0, a.nu0, &cfg)?;
    io::write_variances(&a.out, data.series_ids(), data.n_times(), &table)?;
    println!("wrote {} variances to {}", a.mode, a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let workers = resolve_workers(a.workers)?;
    if let Some(path) = &a.manifest {
        let m: RunManifest = io::read_json(path)?;
        warn_experimental(m.settings.sampler);
        let out = run::replay(&m, workers, &a.out)?;
        report_run(&out, &a.out);
        return Ok(());
    }
    let data = a
        .data
        .ok_or_else(|| Error::Config("a dataset path is required unless --manifest is given".into()))?;
    let mut settings = RunSettings::new(data, VarianceMode::FixedFree);
    let mut variances_given = false;
    let mut pairs = match &a.config {
        Some(path) => io::read_key_values(path)?,
        None => vec![],
    };
    for o in &a.overrides {
        let (k, v) = key_value(o)?;
        pairs.push((k.to_string(), v.to_string()));
    }
    for (k, v) in &pairs {
        settings.set(k, v)?;
        variances_given |= k == "variances";
    }
    if let Some(s) = a.sampler {
        settings.sampler = s;
    }
    if let Some(p) = a.variances {
        settings.variances = VarianceSource::File { path: p };
    } else if a.fuse {
        settings.variances = VarianceSource::Estimate;
    } else if !variances_given {
        return Err(Error::Config(
            "pass --variances FILE from estimate-variance, or --fuse to estimate them in this run".into(),
        ));
    }
    settings.prior_only |= a.prior_only;
    warn_experimental(settings.sampler);
    let manifest = run::execute_run(&settings, a.seed, workers, &a.out)?;
    report_run(&manifest, &a.out);
    Ok(())
}

fn warn_experimental(mode: VarianceMode) {
    if mode == VarianceMode::GibbsShared {
        eprintln!(
            "warning: sampler s4 is experimental; all series advance in lock-step with one shared \
             variance update per sweep"
        );
    }
}

fn report_run(m: &RunManifest, out: &Path) {
    let records: usize = m.series.iter().map(|s| s.n_records).sum();
    println!(
        "sampled {} series with {} (seed {}), {records} records in {}",
        m.series.len(),
        m.settings.sampler,
        m.master_seed,
        out.display()
    );
}

fn summarize_cmd(a: SummarizeArgs) -> Result<()> {
    let (manifest, traces) = run::load_run(&a.run)?;
    let ids: Vec<String> = manifest.series.iter().map(|s| s.id.clone()).collect();
    let summaries: io::Summaries = ids
        .iter()
        .zip(&traces)
        .map(|(id, tr)| Ok((id.clone(), summarize(id, tr, a.band_sds)?)))
        .collect::<Result<_>>()?;
    io::write_json(&a.out.join("summaries.json"), &summaries)?;
    io::write_plot_data(&a.out, &ids, &traces, &summaries)?;
    println!("summarised {} series into {}", summaries.len(), a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let summaries: io::Summaries = io::read_json(&a.summaries)?;
    let truth = io::read_truth(&a.truth)?;
    let estimates: BTreeMap<String, usize> = summaries.iter().map(|(k, s)| (k.clone(), s.ell_map)).collect();
    let score = score_benchmark(&estimates, &truth)?;
    let hist = a
        .histogram
        .unwrap_or_else(|| a.out.with_file_name("error-histogram.csv"));
    io::write_score(&a.out, &hist, &score)?;
    let mut text = String::from("ell\tn\tmae\tse\n");
    for s in &score.strata {
        let se = s.se.map_or("-".to_string(), |v| format!("{v:.3}"));
        text += &format!("{}\t{}\t{:.3}\t{se}\n", s.ell, s.n, s.mae);
    }
    text += &format!("exact recovery: {:.1}%\n", 100.0 * score.exact_fraction());
    emit(&text);
    Ok(())
}

fn check_priors(a: CheckPriorsArgs) -> Result<()> {
    if a.n_times < 3 {
        return Err(Error::Config(format!("T must be at least 3, got {}", a.n_times)));
    }
    let prior = if a.poisson {
        EllPrior::TruncatedPoisson {
            lambda: a.lambda,
            support_max: a.support_max,
        }
    } else {
        EllPrior::Complexity { alpha: a.alpha, b: a.b }
    };
    prior.validate()?;
    let max_ell = a.max_ell.unwrap_or(a.n_times - 2);
    if max_ell > a.n_times - 2 {
        return Err(Error::Config(format!("max-ell {max_ell} exceeds T - 2 = {}", a.n_times - 2)));
    }
    let pmf = ell_prior_pmf(a.n_times, &prior, max_ell);
    let mut text = String::from("ell\tprior\n");
    for (ell, p) in pmf.iter().enumerate().take(11) {
        text += &format!("{ell}\t{p:.6e}\n");
    }
    let check = check_exponential_decrease(&prior, a.n_times, max_ell, a.ell_star, a.c);
    text += &match (check.max_ratio, check.argmax) {
        (Some(r), Some(l)) => format!(
            "exponential decrease over {}..={}: {} (largest P(l)/P(l-1) = {r:.6} at l = {l})\n",
            check.from,
            check.to,
            if check.holds { "holds" } else { "fails" }
        ),
        _ => format!("exponential decrease: nothing to check above {}\n", check.from - 1),
    };
    emit(&text);
    Ok(())
}

/// Writes a report to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::EstimateVariance(a) => estimate_variance(a),
        Command::Run(a) => run(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::CheckPriors(a) => check_priors(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
