//! Ground-truthed synthetic benchmark data.
//!
//! Each series draws a number of change-points, places them near an even
//! grid with binomial jitter, and builds a continuous piecewise linear mean
//! that is flat at zero up to the first change-point and then follows slopes
//! whose signs form a two-state Markov chain. In the noisy kind every
//! replicate gets its own jittered change times and perturbed phase endpoints;
//! in the exact kind all replicates share the mean, so the data follow the
//! sampler's model exactly. Variances grow in expectation from 1 at `t = 1`
//! to 10 at `t = T`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tau_is_valid, Dataset};
use crate::seeds::stream_rng;

const MAX_RETRIES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Noisy,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// One variance per series and time-point.
    Free,
    /// One variance per time-point shared by every series.
    Shared,
}

impl FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy" => Ok(NoiseKind::Noisy),
            "exact" => Ok(NoiseKind::Exact),
            _ => Err(Error::Config(format!("noise must be 'noisy' or 'exact', got '{s}'"))),
        }
    }
}

impl FromStr for VarianceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(VarianceKind::Free),
            "shared" => Ok(VarianceKind::Shared),
            _ => Err(Error::Config(format!("variance must be 'free' or 'shared', got '{s}'"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Noisy => "noisy",
            NoiseKind::Exact => "exact",
        })
    }
}

impl fmt::Display for VarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceKind::Free => "free",
            VarianceKind::Shared => "shared",
        })
    }
}

/// Generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n_times: usize,
    pub n_series: usize,
    pub n_reps: usize,
    /// Number of change-points is uniform on `ell_min..=ell_max`.
    pub ell_min: usize,
    pub ell_max: usize,
    pub noise: NoiseKind,
    pub variance: VarianceKind,
    pub jitter_trials: u64,
    pub jitter_prob: f64,
    /// Subtract the binomial mean from the location jitter.
    pub center_jitter: bool,
    /// Poisson mean of the per-replicate change time offset (noisy kind).
    pub replicate_jitter_mean: f64,
    pub slope_sd: f64,
    pub sign_flip_prob: f64,
    /// Variance of the per-replicate endpoint perturbation (noisy kind).
    pub endpoint_var: f64,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            n_times: 200,
            n_series: 30,
            n_reps: 3,
            ell_min: 0,
            ell_max: 9,
            noise: NoiseKind::Noisy,
            variance: VarianceKind::Free,
            jitter_trials: 100,
            jitter_prob: 0.5,
            center_jitter: true,
            replicate_jitter_mean: 2.0,
            slope_sd: 0.3,
            sign_flip_prob: 0.8,
            endpoint_var: 1.0,
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_times < 3 {
            return bad(format!("T must be at least 3, got {}", self.n_times));
        }
        if self.n_series == 0 || self.n_reps == 0 {
            return bad("N and R must be positive".into());
        }
        if self.ell_min > self.ell_max || self.ell_max > self.n_times - 2 {
            return bad(format!(
                "change-point range {}..={} must be ordered and at most T - 2 = {}",
                self.ell_min,
                self.ell_max,
                self.n_times - 2
            ));
        }
        for (name, p) in [("jitter_prob", self.jitter_prob), ("sign_flip_prob", self.sign_flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        let non_negative = |v: f64| v >= 0.0;
        if ![self.slope_sd, self.endpoint_var, self.replicate_jitter_mean].into_iter().all(non_negative) {
            return bad("slope_sd, endpoint_var and replicate_jitter_mean must be non-negative".into());
        }
        Ok(())
    }

    /// `key=value` lines, one per field, in a stable order.
    pub fn to_config_string(&self) -> String {
        format!(
            "n_times={}\nn_series={}\nn_reps={}\nell_min={}\nell_max={}\nnoise={}\nvariance={}\n\
             jitter_trials={}\njitter_prob={}\ncenter_jitter={}\nreplicate_jitter_mean={}\n\
             slope_sd={}\nsign_flip_prob={}\nendpoint_var={}\nseed={}\n",
            self.n_times,
            self.n_series,
            self.n_reps,
            self.ell_min,
            self.ell_max,
            self.noise,
            self.variance,
            self.jitter_trials,
            self.jitter_prob,
            self.center_jitter,
            self.replicate_jitter_mean,
            self.slope_sd,
            self.sign_flip_prob,
            self.endpoint_var,
            self.seed
        )
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
        }
        match key {
            "n_times" | "T" => self.n_times = parse(key, value)?,
            "n_series" | "N" => self.n_series = parse(key, value)?,
            "n_reps" | "R" => self.n_reps = parse(key, value)?,
            "ell_min" => self.ell_min = parse(key, value)?,
            "ell_max" => self.ell_max = parse(key, value)?,
            "noise" => self.noise = value.parse()?,
            "variance" => self.variance = value.parse()?,
            "jitter_trials" => self.jitter_trials = parse(key, value)?,
            "jitter_prob" => self.jitter_prob = parse(key, value)?,
            "center_jitter" => self.center_jitter = parse(key, value)?,
            "replicate_jitter_mean" => self.replicate_jitter_mean = parse(key, value)?,
            "slope_sd" => self.slope_sd = parse(key, value)?,
            "sign_flip_prob" => self.sign_flip_prob = parse(key, value)?,
            "endpoint_var" => self.endpoint_var = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown scenario key '{key}'"))),
        }
        Ok(())
    }
}

/// What generated one series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTruth {
    pub id: String,
    pub tau: Vec<usize>,
    /// Slope of every phase; the first phase is flat.
    pub slopes: Vec<f64>,
}

impl SeriesTruth {
    pub fn ell(&self) -> usize {
        self.tau.len()
    }

    /// Smallest absolute slope change across the change-points.
    pub fn min_slope_change(&self) -> Option<f64> {
        self.slopes
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .min_by(f64::total_cmp)
    }

    /// Shortest phase, boundaries included.
    pub fn min_segment_length(&self, n_times: usize) -> usize {
        let mut knots = vec![1];
        knots.extend_from_slice(&self.tau);
        knots.push(n_times);
        knots.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(n_times - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub series: Vec<SeriesTruth>,
    /// True variances, flat `[series][time]`.
    pub variances: Vec<f64>,
}

/// Rate of the gamma distribution of the variance at time `t`:
/// `-0.9 t / (T - 1) + (T - 0.1) / (T - 1)`, from 1 at `t = 1` to 0.1 at
/// `t = T`.
pub fn variance_rate(t: usize, n_times: usize) -> f64 {
    let span = (n_times - 1) as f64;
    -0.9 * t as f64 / span + (n_times as f64 - 0.1) / span
}

fn draw_variances(n_times: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (1..=n_times)
        .map(|t| {
            let g = Gamma::new(1.0, 1.0 / variance_rate(t, n_times)).expect("positive rate");
            g.sample(rng)
        })
        .collect()
}

/// Global change-point positions `T j / (l + 1) + y_j`, `y_j ~ Bin(n, p)`,
/// redrawn until strictly ordered inside `(1, T)`.
pub fn draw_locations(sc: &SimScenario, ell: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if ell == 0 {
        return Ok(vec![]);
    }
    let binom = Binomial::new(sc.jitter_trials, sc.jitter_prob)
        .map_err(|e| Error::Config(format!("jitter binomial: {e}")))?;
    let offset = if sc.center_jitter {
        sc.jitter_trials as f64 * sc.jitter_prob
    } else {
        0.0
    };
    for _ in 0..MAX_RETRIES {
        let tau: Vec<usize> = (1..=ell)
            .map(|j| {
                let grid = sc.n_times as f64 * j as f64 / (ell + 1) as f64;
                let y = binom.sample(rng) as f64 - offset;
                (grid + y).round().max(0.0) as usize
            })
            .collect();
        if tau_is_valid(&tau, sc.n_times) {
            return Ok(tau);
        }
    }
    Err(Error::Config(format!(
        "could not place {ell} change-points inside (1, {}) after {MAX_RETRIES} draws",
        sc.n_times
    )))
}

/// Phase slopes: zero first, then `omega_j |Y_j|` with a Markov sign chain.
fn draw_slopes(sc: &SimScenario, ell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut slopes = Vec::with_capacity(ell + 1);
    slopes.push(0.0);
    let normal = Normal::new(0.0, sc.slope_sd).expect("finite sd");
    let mut sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    for j in 0..ell {
        if j > 0 && rng.random::<f64>() < sc.sign_flip_prob {
            sign = -sign;
        }
        let y: f64 = normal.sample(rng);
        slopes.push(sign * y.abs());
    }
    slopes
}

/// Mean curve through knots `1, knots.., T` with the given phase slopes,
/// starting at zero, optionally perturbing every knot value.
fn mean_curve(
    n_times: usize,
    knots: &[usize],
    slopes: &[f64],
    endpoint: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut at = Vec::with_capacity(knots.len() + 2);
    at.push(1);
    at.extend_from_slice(knots);
    at.push(n_times);
    let mut values = Vec::with_capacity(at.len());
    let mut level = 0.0;
    values.push(level);
    for (w, s) in at.windows(2).zip(slopes) {
        level += s * (w[1] - w[0]) as f64;
        values.push(level);
    }
    if let Some(d) = endpoint {
        for v in values.iter_mut() {
            *v += d.sample(rng);
        }
    }
    let mut curve = Vec::with_capacity(n_times);
    curve.push(values[0]);
    for (w, v) in at.windows(2).zip(values.windows(2)) {
        let (a, b) = (w[0], w[1]);
        for t in a + 1..=b {
            curve.push(v[0] + (v[1] - v[0]) * (t - a) as f64 / (b - a) as f64);
        }
    }
    curve
}

/// Per-replicate change times `tau_j + d z` with `d` uniform on `{-1, +1}`
/// and `z ~ Poisson(mean)`, redrawn until valid.
fn jitter_replicate(sc: &SimScenario, tau: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if tau.is_empty() || sc.replicate_jitter_mean == 0.0 {
        return Ok(tau.to_vec());
    }
    let pois = Poisson::new(sc.replicate_jitter_mean)
        .map_err(|e| Error::Config(format!("replicate jitter: {e}")))?;
    for _ in 0..MAX_RETRIES {
        let moved: Vec<usize> = tau
            .iter()
            .map(|&t| {
                let d: i64 = if rng.random::<bool>() { 1 } else { -1 };
                let z = pois.sample(rng) as i64;
                (t as i64 + d * z).max(0) as usize
            })
            .collect();
        if tau_is_valid(&moved, sc.n_times) {
            return Ok(moved);
        }
    }
    Err(Error::Config("could not jitter replicate change times inside the series".into()))
}

fn series_id(n: usize) -> String {
    format!("s{:04}", n + 1)
}

/// Generates a dataset and the truth behind it.
pub fn simulate_dataset(sc: &SimScenario) -> Result<(Dataset, GroundTruth)> {
    sc.validate()?;
    let (n_times, n_reps) = (sc.n_times, sc.n_reps);
    let shared = match sc.variance {
        VarianceKind::Shared => Some(draw_variances(n_times, &mut stream_rng(sc.seed, u64::MAX))),
        VarianceKind::Free => None,
    };
    let endpoint = match sc.noise {
        NoiseKind::Noisy if sc.endpoint_var > 0.0 => {
            Some(Normal::new(0.0, sc.endpoint_var.sqrt()).expect("finite variance"))
        }
        _ => None,
    };

    let mut values = Vec::with_capacity(sc.n_series * n_times * n_reps);
    let mut variances = Vec::with_capacity(sc.n_series * n_times);
    let mut truths = Vec::with_capacity(sc.n_series);
    for n in 0..sc.n_series {
        let mut rng = stream_rng(sc.seed, n as u64);
        let ell = rng.random_range(sc.ell_min..=sc.ell_max);
        let tau = draw_locations(sc, ell, &mut rng)?;
        let slopes = draw_slopes(sc, ell, &mut rng);
        let sigma2 = match &shared {
            Some(s) => s.clone(),
            None => draw_variances(n_times, &mut rng),
        };
        let curves: Vec<Vec<f64>> = match sc.noise {
            NoiseKind::Exact => {
                let c = mean_curve(n_times, &tau, &slopes, None, &mut rng);
                vec![c; n_reps]
            }
            NoiseKind::Noisy => (0..n_reps)
                .map(|_| {
                    let knots = jitter_replicate(sc, &tau, &mut rng)?;
                    Ok(mean_curve(n_times, &knots, &slopes, endpoint.as_ref(), &mut rng))
                })
                .collect::<Result<_>>()?,
        };
        for t in 0..n_times {
            let sd = sigma2[t].sqrt();
            for curve in &curves {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                values.push(curve[t] + sd * z);
            }
        }
        variances.extend_from_slice(&sigma2);
        truths.push(SeriesTruth {
            id: series_id(n),
            tau,
            slopes,
        });
    }
    let ids = truths.iter().map(|s| s.id.clone()).collect();
    let data = Dataset::new(ids, n_times, n_reps, values)?;
    Ok((
        data,
        GroundTruth {
            series: truths,
            variances,
        },
    ))
}
