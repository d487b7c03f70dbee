//! Target specifications of an experiment config and the samplers they admit.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use invmcmc_core::discrete::{uniform_other_proposal, AcceptanceRule, DiscreteMetropolis, DiscreteTransition};
use invmcmc_core::rng::{standard_normal_vec, stream, Purpose};
use invmcmc_core::samplers::targets::{DiscreteTarget, GaussianMixture, GaussianTarget, WithSurrogate};
use invmcmc_core::samplers::{
    build_multiproposal_with, build_sampler, GradientSource, Reference, Sampler, SamplerConfig, SamplerKind,
    SharedTarget, TargetModel,
};
use invmcmc_core::CovarianceSpectrum;
use invmcmc_models::advection_diffusion::{ObservationSet, Scenario};
use invmcmc_models::bmds::{simulate, BmdsGibbs, BmdsPosterior, DissimilarityMatrix};
use invmcmc_models::ctmc::{synthetic_posterior, CtmcObservations, CtmcPosterior, MixedEffectsParams};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// `N(mean, Σ)` with either diagonal `variances` or a full `precision`.
    Gaussian {
        mean: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variances: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        precision: Option<Vec<Vec<f64>>>,
        /// Surrogate gradient `c ∇ log π`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        surrogate_scale: Option<f64>,
    },
    /// Isotropic Gaussian mixture. With `reference_variance` the density is
    /// taken against `N(0, s² I)`, which admits pCN-type samplers.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        sd: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference_variance: Option<f64>,
    },
    /// Mixed-effects CTMC with an intercept fixed effect and one random
    /// effect per off-diagonal rate. Without `data` the observations are
    /// simulated from `data_seed`.
    Ctmc {
        states: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
        #[serde(default = "default_draws")]
        n_draws: usize,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
    /// Bayesian MDS. Without `data` the dissimilarities are simulated.
    /// `bands` sets the surrogate gradient; `sample_sigma2` switches to the
    /// HMC-within-Gibbs sampler with `σ²` appended to the state.
    Bmds {
        objects: usize,
        dim: usize,
        sigma2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bands: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
        #[serde(default)]
        sample_sigma2: bool,
    },
    /// Velocity inversion from a scenario file, or the built-in scenario.
    AdvectionDiffusion {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
    },
    /// A pmf on `{0, …, n−1}`.
    DiscreteToy {
        pmf: Vec<f64>,
        #[serde(default = "default_rule")]
        rule: AcceptanceRule,
    },
}

fn default_draws() -> usize {
    500
}

fn default_data_seed() -> u64 {
    1
}

fn default_rule() -> AcceptanceRule {
    AcceptanceRule::Metropolis
}

impl TargetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::Gaussian { .. } => "gaussian",
            TargetSpec::GaussianMixture { .. } => "gaussian_mixture",
            TargetSpec::Ctmc { .. } => "ctmc",
            TargetSpec::Bmds { .. } => "bmds",
            TargetSpec::AdvectionDiffusion { .. } => "advection_diffusion",
            TargetSpec::DiscreteToy { .. } => "discrete_toy",
        }
    }

    /// Joins relative data paths onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        match self {
            TargetSpec::Ctmc { data, .. } | TargetSpec::Bmds { data, .. } => join(data),
            TargetSpec::AdvectionDiffusion { scenario, data } => {
                join(scenario);
                join(data);
            }
            _ => {}
        }
    }

    pub fn build(&self) -> Result<Model> {
        Ok(match self {
            TargetSpec::Gaussian {
                mean,
                variances,
                precision,
                surrogate_scale,
            } => {
                let g = match (variances, precision) {
                    (Some(v), None) => GaussianTarget::diagonal(mean.clone(), v)?,
                    (None, Some(p)) => GaussianTarget::new(mean.clone(), p.clone())?,
                    (None, None) => GaussianTarget::diagonal(mean.clone(), &vec![1.0; mean.len()])?,
                    (Some(_), Some(_)) => {
                        return Err(CliError::config(
                            "gaussian target takes `variances` or `precision`, not both",
                        ))
                    }
                };
                let g: SharedTarget = Arc::new(g);
                let target: SharedTarget = match surrogate_scale {
                    Some(c) => Arc::new(WithSurrogate::scaled(g, *c)),
                    None => g,
                };
                Model::continuous(target)
            }
            TargetSpec::GaussianMixture {
                weights,
                means,
                sd,
                reference_variance,
            } => {
                let m: SharedTarget = Arc::new(GaussianMixture::new(weights.clone(), means.clone(), *sd)?);
                let target: SharedTarget = match reference_variance {
                    Some(s2) => {
                        let spectrum = CovarianceSpectrum::new(vec![*s2; m.dim()])?;
                        Arc::new(AgainstGaussian::new(m, spectrum)?)
                    }
                    None => m,
                };
                Model::continuous(target)
            }
            TargetSpec::Ctmc {
                states,
                data,
                n_draws,
                data_seed,
            } => {
                let posterior = match data {
                    Some(path) => {
                        let obs = CtmcObservations::read_csv(open(path)?, CtmcObservations::uniform_initial(*states))?;
                        let mut intercept = DMatrix::from_element(*states, *states, 1.0);
                        intercept.fill_diagonal(0.0);
                        let lambda = vec![0.0; states * states.saturating_sub(1)];
                        let template = MixedEffectsParams::new(*states, vec![0.0], lambda, vec![intercept])?;
                        CtmcPosterior::new(template, obs)?
                    }
                    None => synthetic_posterior(*states, *n_draws, *data_seed)?.1,
                };
                Model::continuous(Arc::new(posterior))
            }
            TargetSpec::Bmds {
                objects,
                dim,
                sigma2,
                bands,
                data,
                data_seed,
                sample_sigma2,
            } => {
                let delta = match data {
                    Some(path) => DissimilarityMatrix::read_csv(open(path)?)?,
                    None => simulate(*objects, *dim, *sigma2, *data_seed)?.1,
                };
                if delta.objects() != *objects {
                    return Err(CliError::config(format!(
                        "dissimilarity matrix has {} objects, config says {objects}",
                        delta.objects()
                    )));
                }
                let bands = bands.unwrap_or(objects.saturating_sub(1));
                let delta = Arc::new(delta);
                if *sample_sigma2 {
                    BmdsPosterior::new(delta.clone(), *dim, *sigma2, bands)?;
                    Model {
                        kind: ModelKind::BmdsGibbs {
                            delta,
                            dim: *dim,
                            bands,
                            sigma2: *sigma2,
                        },
                    }
                } else {
                    Model {
                        kind: ModelKind::Continuous {
                            target: Arc::new(BmdsPosterior::new(delta, *dim, *sigma2, bands)?),
                            random_start: true,
                        },
                    }
                }
            }
            TargetSpec::AdvectionDiffusion { scenario, data } => {
                let scenario = match scenario {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                        Scenario::from_json(&text)?
                    }
                    None => Scenario::default(),
                };
                let obs = match data {
                    Some(path) => ObservationSet::read_csv(open(path)?, scenario.sigma)?,
                    None => scenario.generate_data()?,
                };
                Model::continuous(Arc::new(scenario.posterior(obs)?))
            }
            TargetSpec::DiscreteToy { pmf, rule } => {
                DiscreteTarget::new(pmf.clone())?;
                Model {
                    kind: ModelKind::Discrete {
                        pmf: pmf.clone(),
                        rule: *rule,
                    },
                }
            }
        })
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

#[derive(Clone)]
enum ModelKind {
    Continuous {
        target: SharedTarget,
        random_start: bool,
    },
    BmdsGibbs {
        delta: Arc<DissimilarityMatrix>,
        dim: usize,
        bands: usize,
        sigma2: f64,
    },
    Discrete {
        pmf: Vec<f64>,
        rule: AcceptanceRule,
    },
}

/// A built target, ready to hand out one sampler per chain.
#[derive(Clone)]
pub struct Model {
    kind: ModelKind,
}

impl Model {
    pub fn continuous(target: SharedTarget) -> Self {
        Self {
            kind: ModelKind::Continuous {
                target,
                random_start: false,
            },
        }
    }

    pub fn target(&self) -> Option<&SharedTarget> {
        match &self.kind {
            ModelKind::Continuous { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ModelKind::Continuous { target, .. } => target.dim(),
            ModelKind::BmdsGibbs { delta, dim, .. } => delta.objects() * dim + 1,
            ModelKind::Discrete { .. } => 1,
        }
    }

    /// Starting point when the config gives none: the origin, except for
    /// BMDS, whose origin is a degenerate configuration and which starts
    /// from standard normal locations drawn from `seed`.
    pub fn default_initial(&self, seed: u64) -> Vec<f64> {
        match &self.kind {
            ModelKind::Continuous { target, random_start } => {
                if *random_start {
                    standard_normal_vec(&mut stream(seed, 0, Purpose::Initial), target.dim())
                } else {
                    vec![0.0; target.dim()]
                }
            }
            ModelKind::BmdsGibbs { delta, dim, sigma2, .. } => {
                let mut x = standard_normal_vec(&mut stream(seed, 0, Purpose::Initial), delta.objects() * dim);
                x.push(*sigma2);
                x
            }
            ModelKind::Discrete { .. } => vec![0.0],
        }
    }

    pub fn sampler(&self, config: &SamplerConfig) -> Result<Box<dyn Sampler>> {
        match &self.kind {
            ModelKind::Continuous { target: t, .. } => {
                if matches!(config.kind, SamplerKind::Pcn | SamplerKind::Mpcn | SamplerKind::InfHmc)
                    && t.reference() == Reference::Lebesgue
                {
                    return Err(CliError::config(format!(
                        "{} needs a target with a Gaussian reference",
                        config.kind.name()
                    )));
                }
                Ok(build_sampler(t.clone(), config)?)
            }
            ModelKind::BmdsGibbs { delta, dim, bands, .. } => {
                let source = match config.kind {
                    SamplerKind::Hmc => GradientSource::Exact,
                    SamplerKind::SurrogateHmc => GradientSource::Surrogate,
                    k => {
                        return Err(CliError::config(format!(
                            "bmds with sample_sigma2 runs hmc or surrogate_hmc, not {}",
                            k.name()
                        )))
                    }
                };
                let step = config
                    .step_size
                    .ok_or_else(|| CliError::config("bmds HMC needs `step_size`"))?;
                Ok(Box::new(BmdsGibbs::new(
                    delta.clone(),
                    *dim,
                    source,
                    *bands,
                    step,
                    config.n_steps,
                )?))
            }
            ModelKind::Discrete { pmf, rule } => match config.kind {
                SamplerKind::Rwm | SamplerKind::Mh => Ok(Box::new(DiscreteMetropolis::uniform(pmf.clone(), *rule)?)),
                SamplerKind::Multiproposal => {
                    let target: SharedTarget = Arc::new(DiscreteTarget::new(pmf.clone())?);
                    let walk = Arc::new(DiscreteTransition::new(uniform_other_proposal(pmf.len()))?);
                    Ok(build_multiproposal_with(target, config, walk)?)
                }
                k => Err(CliError::config(format!(
                    "discrete_toy runs rwm, mh or multiproposal, not {}",
                    k.name()
                ))),
            },
        }
    }
}

/// A Lebesgue density re-expressed against `N(0, C)`.
pub struct AgainstGaussian {
    inner: SharedTarget,
    spectrum: CovarianceSpectrum,
}

impl AgainstGaussian {
    pub fn new(inner: SharedTarget, spectrum: CovarianceSpectrum) -> Result<Self> {
        if inner.reference() != Reference::Lebesgue {
            return Err(CliError::config("target already has a Gaussian reference"));
        }
        if spectrum.dim() != inner.dim() {
            return Err(CliError::config("reference dimension does not match the target"));
        }
        Ok(Self { inner, spectrum })
    }
}

impl TargetModel for AgainstGaussian {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, q: &[f64]) -> invmcmc_core::Result<f64> {
        Ok(self.inner.log_density(q)? - self.spectrum.log_density(q))
    }

    fn reference(&self) -> Reference {
        Reference::Gaussian(self.spectrum.clone())
    }

    fn has_gradient(&self) -> bool {
        self.inner.has_gradient()
    }

    fn gradient(&self, q: &[f64]) -> invmcmc_core::Result<Vec<f64>> {
        let mut g = self.inner.gradient(q)?;
        for (gi, p) in g.iter_mut().zip(self.spectrum.log_density_gradient(q)) {
            *gi -= p;
        }
        Ok(g)
    }
}
