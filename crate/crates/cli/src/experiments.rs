//! Scaled-down reproductions of the three case studies.

use std::sync::Arc;
use std::time::Instant;

use invmcmc_core::diagnostics::{ess, median, mode_occupancy, DiagnosticsReport, Occupancy};
use invmcmc_core::samplers::{
    ChainOptions, GradientSource, Hmc, MetropolisHastings, MultiProposal, Sampler, SharedTarget, TargetModel,
};
use invmcmc_models::advection_diffusion::Scenario;
use invmcmc_models::bmds::{pairwise_distances, simulate, BmdsPosterior};
use invmcmc_models::ctmc::{synthetic_posterior, CtmcPosterior};
use serde::Serialize;

use crate::checks::{heat_decay_check, CheckResult};
use crate::error::Result;

type CoreResult<T> = invmcmc_core::Result<T>;

/// Per-seed min-ESS/s of a candidate sampler and a baseline.
#[derive(Debug, Clone, Serialize)]
pub struct EssComparison {
    pub seeds: Vec<u64>,
    pub candidate: Vec<f64>,
    pub baseline: Vec<f64>,
    pub candidate_acceptance: Vec<f64>,
    pub baseline_acceptance: Vec<f64>,
}

impl EssComparison {
    pub fn candidate_median(&self) -> f64 {
        median(&self.candidate)
    }

    pub fn baseline_median(&self) -> f64 {
        median(&self.baseline)
    }

    pub fn ratio(&self) -> f64 {
        self.candidate_median() / self.baseline_median()
    }
}

fn min_ess_rate(
    sampler: &mut dyn Sampler,
    initial: Vec<f64>,
    options: &ChainOptions,
    burn_in: usize,
) -> Result<(f64, f64)> {
    let chain = sampler.run(initial, options)?;
    let report = DiagnosticsReport::from_chain(&chain, burn_in)?;
    Ok((report.min_ess_per_second(), report.acceptance_rate))
}

/// A CTMC posterior over the random effects alone, fixed effects held at `beta`.
#[derive(Debug, Clone)]
pub struct RandomEffectsPosterior {
    inner: CtmcPosterior,
    beta: Vec<f64>,
}

impl RandomEffectsPosterior {
    pub fn new(inner: CtmcPosterior, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != inner.template().beta.len() {
            return Err(crate::error::CliError::config(
                "fixed-effect count does not match the model",
            ));
        }
        Ok(Self { inner, beta })
    }

    fn full(&self, lambda: &[f64]) -> Vec<f64> {
        self.beta.iter().chain(lambda).copied().collect()
    }

    fn tail(&self, g: Vec<f64>) -> Vec<f64> {
        g[self.beta.len()..].to_vec()
    }
}

impl TargetModel for RandomEffectsPosterior {
    fn dim(&self) -> usize {
        self.inner.dim() - self.beta.len()
    }

    fn log_density(&self, q: &[f64]) -> CoreResult<f64> {
        self.inner.log_density(&self.full(q))
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, q: &[f64]) -> CoreResult<Vec<f64>> {
        Ok(self.tail(self.inner.gradient(&self.full(q))?))
    }

    fn has_surrogate_gradient(&self) -> bool {
        true
    }

    fn surrogate_gradient(&self, q: &[f64]) -> CoreResult<Vec<f64>> {
        Ok(self.tail(self.inner.surrogate_gradient(&self.full(q))?))
    }
}

#[derive(Debug, Clone)]
pub struct CtmcStudy {
    pub states: usize,
    pub n_draws: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub leapfrog_steps: usize,
    pub hmc_target: f64,
    pub rwm_target: f64,
    pub seeds: Vec<u64>,
}

impl Default for CtmcStudy {
    fn default() -> Self {
        Self {
            states: 5,
            n_draws: 500,
            n_iter: 20000,
            burn_in: 2000,
            leapfrog_steps: 8,
            hmc_target: 0.7,
            rwm_target: 0.234,
            seeds: (1..=5).collect(),
        }
    }
}

/// Surrogate HMC (first-order gradient) against adaptive random-walk
/// Metropolis on the random effects of a synthetic mixed-effects CTMC
/// posterior, fixed effects held at the truth; both start at the truth.
pub fn ctmc_study(study: &CtmcStudy) -> Result<EssComparison> {
    let mut out = EssComparison {
        seeds: study.seeds.clone(),
        candidate: Vec::new(),
        baseline: Vec::new(),
        candidate_acceptance: Vec::new(),
        baseline_acceptance: Vec::new(),
    };
    for &seed in &study.seeds {
        let (truth, posterior) = synthetic_posterior(study.states, study.n_draws, seed)?;
        let target: SharedTarget = Arc::new(RandomEffectsPosterior::new(posterior, truth.beta.clone())?);
        let start = truth.lambda.clone();
        let mut hmc = Hmc::new(
            target.clone(),
            GradientSource::Surrogate,
            0.05,
            study.leapfrog_steps,
            None,
        )?;
        let opts = ChainOptions::new(study.n_iter, seed).adapt(study.burn_in, study.hmc_target);
        let (rate, acc) = min_ess_rate(&mut hmc, start.clone(), &opts, study.burn_in)?;
        out.candidate.push(rate);
        out.candidate_acceptance.push(acc);
        let mut rwm = MetropolisHastings::rwm(target, 0.05)?;
        let opts = ChainOptions::new(study.n_iter, seed)
            .chain(1)
            .adapt(study.burn_in, study.rwm_target);
        let (rate, acc) = min_ess_rate(&mut rwm, start, &opts, study.burn_in)?;
        out.baseline.push(rate);
        out.baseline_acceptance.push(acc);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BmdsStudy {
    pub objects: usize,
    pub dim: usize,
    pub sigma2: f64,
    pub bands: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub leapfrog_steps: usize,
    pub target_accept: f64,
    pub seeds: Vec<u64>,
}

impl Default for BmdsStudy {
    fn default() -> Self {
        Self {
            objects: 100,
            dim: 2,
            sigma2: 0.25,
            bands: 10,
            n_iter: 8000,
            burn_in: 1000,
            leapfrog_steps: 8,
            target_accept: 0.65,
            seeds: (1..=5).collect(),
        }
    }
}

/// Min-ESS/s over the pairwise distances of the latent configuration, which
/// unlike the coordinates are identified by the likelihood.
fn distance_ess_rate(
    sampler: &mut dyn Sampler,
    initial: Vec<f64>,
    options: &ChainOptions,
    study: &BmdsStudy,
) -> Result<(f64, f64)> {
    let chain = sampler.run(initial, options)?;
    let distances: Vec<Vec<f64>> = chain
        .post_burn_in(study.burn_in)
        .iter()
        .map(|x| pairwise_distances(x, study.objects, study.dim))
        .collect();
    let mut min_ess = f64::INFINITY;
    for k in 0..distances[0].len() {
        let series: Vec<f64> = distances.iter().map(|d| d[k]).collect();
        min_ess = min_ess.min(ess(&series)?);
    }
    Ok((
        min_ess / chain.wall_time(study.burn_in),
        chain.acceptance_rate(study.burn_in),
    ))
}

/// Band-surrogate HMC (candidate) against full-gradient HMC (baseline) on
/// simulated BMDS data, scored on pairwise distances; both start at the
/// simulation truth.
pub fn bmds_study(study: &BmdsStudy) -> Result<EssComparison> {
    let mut out = EssComparison {
        seeds: study.seeds.clone(),
        candidate: Vec::new(),
        baseline: Vec::new(),
        candidate_acceptance: Vec::new(),
        baseline_acceptance: Vec::new(),
    };
    for &seed in &study.seeds {
        let (truth, delta) = simulate(study.objects, study.dim, study.sigma2, seed)?;
        let target: SharedTarget = Arc::new(BmdsPosterior::new(
            Arc::new(delta),
            study.dim,
            study.sigma2,
            study.bands,
        )?);
        let start = truth.flat().to_vec();
        for (source, chain) in [(GradientSource::Surrogate, 0), (GradientSource::Exact, 1)] {
            let mut hmc = Hmc::new(target.clone(), source, 0.01, study.leapfrog_steps, None)?;
            let opts = ChainOptions::new(study.n_iter, seed)
                .chain(chain)
                .adapt(study.burn_in, study.target_accept);
            let (rate, acc) = distance_ess_rate(&mut hmc, start.clone(), &opts, study)?;
            if chain == 0 {
                out.candidate.push(rate);
                out.candidate_acceptance.push(acc);
            } else {
                out.baseline.push(rate);
                out.baseline_acceptance.push(acc);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AdStudy {
    pub scenario: Scenario,
    pub proposal_count: usize,
    pub rho: f64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Ball radius around `±a` for the occupancy of coefficient 0.
    pub radius: f64,
    pub wall_budget_seconds: f64,
}

impl Default for AdStudy {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            proposal_count: 16,
            rho: 0.98,
            n_iter: 4000,
            burn_in: 200,
            seed: 7,
            radius: 0.3,
            wall_budget_seconds: 720.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdOutcome {
    pub heat_decay: CheckResult,
    /// Absent when the heat-decay gate failed.
    pub chain: Option<AdChain>,
}

#[derive(Debug, Clone)]
pub struct AdChain {
    /// Centers `+a` and `−a` of the two mirror modes in coefficient 0.
    pub centers: [f64; 2],
    pub occupancy: Occupancy,
    pub acceptance_rate: f64,
    pub sign_changes: usize,
    pub wall_seconds: f64,
}

impl AdOutcome {
    /// Both modes hold at least `min_fraction` and the chain finished in budget.
    pub fn passed(&self, min_fraction: f64, budget: f64) -> bool {
        self.heat_decay.passed
            && self
                .chain
                .as_ref()
                .is_some_and(|c| c.occupancy.fractions.iter().all(|&f| f >= min_fraction) && c.wall_seconds <= budget)
    }
}

/// mpCN from the symmetric point `v = 0` on the advection-diffusion
/// posterior, gated by the solver's heat-decay check.
pub fn ad_study(study: &AdStudy) -> Result<AdOutcome> {
    let heat_decay = heat_decay_check();
    if !heat_decay.passed {
        return Ok(AdOutcome {
            heat_decay,
            chain: None,
        });
    }
    let obs = study.scenario.generate_data()?;
    let target: SharedTarget = Arc::new(study.scenario.posterior(obs)?);
    let mut mpcn = MultiProposal::mpcn(target.clone(), study.rho, study.proposal_count)?;
    let start = Instant::now();
    let chain = mpcn.run(vec![0.0; target.dim()], &ChainOptions::new(study.n_iter, study.seed))?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let a = study.scenario.true_coefficients[0].abs();
    let coefficient: Vec<Vec<f64>> = chain.component(0, study.burn_in).into_iter().map(|x| vec![x]).collect();
    let occupancy = mode_occupancy(&coefficient, &[vec![a], vec![-a]], study.radius)?;
    let sign_changes = coefficient
        .windows(2)
        .filter(|w| (w[0][0] > 0.0) != (w[1][0] > 0.0))
        .count();
    Ok(AdOutcome {
        heat_decay,
        chain: Some(AdChain {
            centers: [a, -a],
            occupancy,
            acceptance_rate: chain.acceptance_rate(study.burn_in),
            sign_changes,
            wall_seconds,
        }),
    })
}
