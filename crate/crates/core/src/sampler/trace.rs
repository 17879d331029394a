use serde::{Deserialize, Serialize};

use crate::model::ChainState;

/// Which moves were accepted in one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accepts {
    pub birth_death: bool,
    pub theta_walk: bool,
    /// Move 3, whichever of the joint or single shift was drawn.
    pub shift: bool,
}

impl Accepts {
    /// Three `0`/`1` characters in move order.
    pub fn encode(&self) -> String {
        [self.birth_death, self.theta_walk, self.shift]
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    pub fn decode(s: &str) -> Option<Self> {
        let b: Vec<bool> = s
            .chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<_>>()?;
        match b.as_slice() {
            &[birth_death, theta_walk, shift] => Some(Accepts {
                birth_death,
                theta_walk,
                shift,
            }),
            _ => None,
        }
    }
}

/// One stored iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based iteration index.
    pub iter: usize,
    pub tau: Vec<usize>,
    /// `theta` at `{1} ∪ tau ∪ {T}`, in that order.
    pub active_theta: Vec<f64>,
    pub log_posterior: f64,
    pub accepts: Accepts,
}

impl TraceRecord {
    pub fn ell(&self) -> usize {
        self.tau.len()
    }

    pub(crate) fn capture(iter: usize, state: &ChainState, log_posterior: f64, accepts: Accepts) -> Self {
        TraceRecord {
            iter,
            tau: state.tau.clone(),
            active_theta: state.active_theta(),
            log_posterior,
            accepts,
        }
    }

    /// Piecewise linear mean at every `t` in `1..=n_times`.
    pub fn mean_curve(&self, n_times: usize) -> Vec<f64> {
        let mut knots = Vec::with_capacity(self.tau.len() + 2);
        knots.push(1);
        knots.extend_from_slice(&self.tau);
        knots.push(n_times);
        let mut out = Vec::with_capacity(n_times);
        out.push(self.active_theta[0]);
        for (w, v) in knots.windows(2).zip(self.active_theta.windows(2)) {
            let (a, b) = (w[0], w[1]);
            for t in a + 1..=b {
                out.push(if t == b {
                    v[1]
                } else {
                    v[0] + (v[1] - v[0]) * ((t - a) as f64 / (b - a) as f64)
                });
            }
        }
        out
    }
}

/// Acceptance counts over all iterations, burn-in included.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptCounts {
    pub iterations: usize,
    pub birth_death: usize,
    pub theta_walk: usize,
    pub shift: usize,
}

impl AcceptCounts {
    pub(crate) fn add(&mut self, a: Accepts) {
        self.iterations += 1;
        self.birth_death += a.birth_death as usize;
        self.theta_walk += a.theta_walk as usize;
        self.shift += a.shift as usize;
    }
}

/// Thinned post-burn-in record of a chain. Iteration `m` is stored when
/// `m > burn_in` and `m % thin == 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub n_times: usize,
    pub max_ell: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub records: Vec<TraceRecord>,
    pub accept_counts: AcceptCounts,
}

impl Trace {
    pub fn new(n_times: usize, max_ell: usize, burn_in: usize, thin: usize) -> Self {
        Trace {
            n_times,
            max_ell,
            burn_in,
            thin,
            records: Vec::new(),
            accept_counts: AcceptCounts::default(),
        }
    }

    pub fn should_record(&self, iter: usize) -> bool {
        iter > self.burn_in && iter.is_multiple_of(self.thin)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}
