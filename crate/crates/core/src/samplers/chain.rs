use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::McmcError;
use crate::involutive::{master_step, KernelSpec};
use crate::rng::{stream, Purpose};
use crate::Result;

/// Samples plus per-step metadata of one chain.
///
/// `samples` has `n_iter + 1` rows starting with the initial state; the
/// per-step vectors have `n_iter` entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainRecord {
    pub samples: Vec<Vec<f64>>,
    pub chosen_index: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
    /// Cumulative wall time after each step.
    pub wall_seconds: Vec<f64>,
    pub diverged: Vec<usize>,
    /// Tuning parameter after adaptation, if any.
    pub final_tuning: Option<f64>,
}

impl ChainRecord {
    pub fn n_iter(&self) -> usize {
        self.chosen_index.len()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn accepted(&self, step: usize) -> bool {
        self.chosen_index[step] != 0
    }

    /// Fraction of steps in `from..` whose chosen index is not 0.
    pub fn acceptance_rate(&self, from: usize) -> f64 {
        let steps = &self.chosen_index[from.min(self.n_iter())..];
        if steps.is_empty() {
            return 0.0;
        }
        steps.iter().filter(|&&j| j != 0).count() as f64 / steps.len() as f64
    }

    /// Wall time spent in steps `from..`.
    pub fn wall_time(&self, from: usize) -> f64 {
        let total = self.wall_seconds.last().copied().unwrap_or(0.0);
        let before = if from == 0 || self.wall_seconds.is_empty() {
            0.0
        } else {
            self.wall_seconds[(from - 1).min(self.wall_seconds.len() - 1)]
        };
        total - before
    }

    /// States after the first `burn_in` steps.
    pub fn post_burn_in(&self, burn_in: usize) -> &[Vec<f64>] {
        &self.samples[burn_in.min(self.samples.len())..]
    }

    /// Column `i` of `samples[from..]`.
    pub fn component(&self, i: usize, from: usize) -> Vec<f64> {
        self.samples[from.min(self.samples.len())..]
            .iter()
            .map(|s| s[i])
            .collect()
    }

    /// Equality of everything except wall times.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.samples == other.samples
            && self.chosen_index == other.chosen_index
            && self.probabilities == other.probabilities
            && self.diverged == other.diverged
            && self.final_tuning == other.final_tuning
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergencePolicy {
    /// A diverged image gets zero weight and the chain continues.
    #[default]
    Reject,
    /// The chain stops with a divergence error.
    Abort,
}

/// Dual averaging of the log tuning parameter during burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    pub burn_in: usize,
    pub target_accept: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOptions {
    pub n_iter: usize,
    pub seed: u64,
    pub chain_index: u64,
    pub adaptation: Option<Adaptation>,
    pub divergence: DivergencePolicy,
}

impl ChainOptions {
    pub fn new(n_iter: usize, seed: u64) -> Self {
        Self {
            n_iter,
            seed,
            chain_index: 0,
            adaptation: None,
            divergence: DivergencePolicy::Reject,
        }
    }

    pub fn chain(mut self, index: u64) -> Self {
        self.chain_index = index;
        self
    }

    pub fn adapt(mut self, burn_in: usize, target_accept: f64) -> Self {
        self.adaptation = Some(Adaptation { burn_in, target_accept });
        self
    }

    pub fn divergence(mut self, policy: DivergencePolicy) -> Self {
        self.divergence = policy;
        self
    }
}

/// Hoffman–Gelman dual averaging on `log ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    m: usize,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(initial: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial).ln(),
            target,
            h_bar: 0.0,
            log_eps: initial.ln(),
            log_eps_bar: 0.0,
            m: 0,
        }
    }

    /// Feeds one acceptance statistic and returns the next parameter value.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.m += 1;
        let m = self.m as f64;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat);
        self.log_eps = (self.mu - m.sqrt() / Self::GAMMA * self.h_bar).clamp(self.mu - 30.0, self.mu + 10.0);
        let eta = m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    /// The averaged value to freeze after burn-in.
    pub fn final_value(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// `n_iter` master steps from `initial` on the chain stream of `seed`.
pub fn run_chain<K: KernelSpec + Clone>(
    kernel: &K,
    initial: Vec<f64>,
    n_iter: usize,
    seed: u64,
) -> Result<ChainRecord> {
    let mut k = kernel.clone();
    run_chain_with(&mut k, initial, &ChainOptions::new(n_iter, seed))
}

/// [`run_chain`] with adaptation and a divergence policy.
///
/// Adaptation changes the kernel's tuning parameter during the first
/// `burn_in` steps only and leaves the frozen value in `kernel`.
pub fn run_chain_with<K: KernelSpec + ?Sized>(
    kernel: &mut K,
    initial: Vec<f64>,
    options: &ChainOptions,
) -> Result<ChainRecord> {
    if options.n_iter == 0 {
        return Err(McmcError::config("n_iter must be at least 1"));
    }
    let mut rng = stream(options.seed, options.chain_index, Purpose::Chain);
    let mut state = kernel.initial_state(initial).map_err(|e| e.at_step(0))?;
    let mut adapter = match (options.adaptation, kernel.tuning_parameter()) {
        (Some(a), Some(initial)) if a.burn_in > 0 => {
            if !(0.0..1.0).contains(&a.target_accept) || a.target_accept == 0.0 {
                return Err(McmcError::config("target acceptance must lie in (0, 1)"));
            }
            Some((a, DualAveraging::new(initial, a.target_accept)))
        }
        _ => None,
    };

    let n = options.n_iter;
    let mut record = ChainRecord {
        samples: Vec::with_capacity(n + 1),
        chosen_index: Vec::with_capacity(n),
        probabilities: Vec::with_capacity(n),
        wall_seconds: Vec::with_capacity(n),
        diverged: Vec::with_capacity(n),
        final_tuning: None,
    };
    record.samples.push(state.q.clone());
    let start = Instant::now();
    for step in 1..=n {
        let out = master_step(kernel, &state, &mut rng).map_err(|e| e.at_step(step))?;
        if options.divergence == DivergencePolicy::Abort {
            if let Some(substep) = out.first_divergence {
                return Err(McmcError::Divergence { substep }.at_step(step));
            }
        }
        if let Some((a, da)) = adapter.as_mut() {
            if step <= a.burn_in {
                let stat = 1.0 - out.probabilities[0];
                let next = if step == a.burn_in {
                    da.final_value()
                } else {
                    da.update(stat)
                };
                kernel.set_tuning_parameter(next);
            }
        }
        record.chosen_index.push(out.chosen_index);
        record.probabilities.push(out.probabilities);
        record.diverged.push(out.diverged);
        state = out.next_state;
        record.samples.push(state.q.clone());
        record.wall_seconds.push(start.elapsed().as_secs_f64());
    }
    if adapter.is_some() {
        record.final_tuning = kernel.tuning_parameter();
    }
    Ok(record)
}

/// Object-safe view of a kernel for runtime dispatch.
pub trait Sampler: Send {
    fn dim(&self) -> usize;
    fn proposal_count(&self) -> usize;
    fn run(&mut self, initial: Vec<f64>, options: &ChainOptions) -> Result<ChainRecord>;
}

impl<K: KernelSpec + Send> Sampler for K {
    fn dim(&self) -> usize {
        KernelSpec::dim(self)
    }

    fn proposal_count(&self) -> usize {
        KernelSpec::proposal_count(self)
    }

    fn run(&mut self, initial: Vec<f64>, options: &ChainOptions) -> Result<ChainRecord> {
        run_chain_with(self, initial, options)
    }
}
