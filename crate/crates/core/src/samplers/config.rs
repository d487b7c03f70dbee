use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::McmcError;
use crate::Result;

use super::{
    GaussianRandomWalkKernel, GradientSource, Hmc, InfHmc, MetropolisHastings, Mhgj, MultiProposal, Pcn, Proposal,
    Reference, Sampler, SharedTarget, SurrogateForce, TransitionKernel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Rwm,
    /// Metropolis-adjusted Langevin proposal.
    Mh,
    Mhgj,
    Hmc,
    SurrogateHmc,
    Pcn,
    InfHmc,
    Multiproposal,
    Mpcn,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Rwm => "rwm",
            SamplerKind::Mh => "mh",
            SamplerKind::Mhgj => "mhgj",
            SamplerKind::Hmc => "hmc",
            SamplerKind::SurrogateHmc => "surrogate_hmc",
            SamplerKind::Pcn => "pcn",
            SamplerKind::InfHmc => "inf_hmc",
            SamplerKind::Multiproposal => "multiproposal",
            SamplerKind::Mpcn => "mpcn",
        }
    }
}

/// How the MHGJ acceptance obtains `|det ∇S|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Taken as 1 without computation.
    Unit,
    #[default]
    Analytic,
    FiniteDifference,
}

/// Force used by `inf_hmc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceKind {
    #[default]
    Exact,
    Surrogate,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Leapfrog `dt`, random-walk scale, Langevin step, or MHGJ noise scale.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub delta_a: Option<f64>,
    #[serde(default)]
    pub delta_b: Option<f64>,
    #[serde(default = "one")]
    pub n_steps: usize,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub proposal_count: Option<usize>,
    /// Diagonal mass matrix.
    #[serde(default)]
    pub mass: Option<Vec<f64>>,
    /// The `c` of the MHGJ involution `(q, v) ↦ (c v, q / c)`.
    #[serde(default)]
    pub mhgj_scale: Option<f64>,
    #[serde(default)]
    pub jacobian: JacobianMode,
    #[serde(default)]
    pub force: ForceKind,
    /// Evaluate multiproposal clouds on the thread pool.
    #[serde(default)]
    pub parallel: bool,
    /// Dual-averaging target during burn-in; `None` disables adaptation.
    #[serde(default)]
    pub target_accept: Option<f64>,
}

fn one() -> usize {
    1
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        Self {
            kind,
            step_size: None,
            delta_a: None,
            delta_b: None,
            n_steps: 1,
            rho: None,
            proposal_count: None,
            mass: None,
            mhgj_scale: None,
            jacobian: JacobianMode::default(),
            force: ForceKind::default(),
            parallel: false,
            target_accept: None,
        }
    }

    fn require(&self, value: Option<f64>, name: &str) -> Result<f64> {
        value.ok_or_else(|| McmcError::config(format!("{} sampler needs `{name}`", self.kind.name())))
    }

    fn proposals(&self) -> Result<usize> {
        match self.proposal_count {
            Some(0) => Err(McmcError::config("proposal_count must be at least 1")),
            Some(p) => Ok(p),
            None => Err(McmcError::config(format!(
                "{} sampler needs `proposal_count`",
                self.kind.name()
            ))),
        }
    }
}

/// Assembles the kernel described by `config`.
pub fn build_sampler(target: SharedTarget, config: &SamplerConfig) -> Result<Box<dyn Sampler>> {
    let c = config;
    Ok(match c.kind {
        SamplerKind::Rwm => Box::new(MetropolisHastings::rwm(target, c.require(c.step_size, "step_size")?)?),
        SamplerKind::Mh => Box::new(MetropolisHastings::new(
            target,
            Proposal::Langevin {
                step: c.require(c.step_size, "step_size")?,
            },
        )?),
        SamplerKind::Mhgj => Box::new(Mhgj::new(
            target,
            c.mhgj_scale.unwrap_or(1.0),
            c.require(c.step_size, "step_size")?,
            c.jacobian,
        )?),
        SamplerKind::Hmc | SamplerKind::SurrogateHmc => {
            let source = if c.kind == SamplerKind::Hmc {
                GradientSource::Exact
            } else {
                GradientSource::Surrogate
            };
            Box::new(Hmc::new(
                target,
                source,
                c.require(c.step_size, "step_size")?,
                c.n_steps,
                c.mass.clone(),
            )?)
        }
        SamplerKind::Pcn => Box::new(Pcn::new(target, c.require(c.rho, "rho")?)?),
        SamplerKind::InfHmc => {
            let delta_b = c.require(c.delta_b.or(c.step_size), "delta_b")?;
            let delta_a = c.delta_a.unwrap_or(delta_b / 2.0);
            let force = match c.force {
                ForceKind::Exact => SurrogateForce::Exact,
                ForceKind::Surrogate => SurrogateForce::Surrogate,
                ForceKind::Zero => SurrogateForce::Zero,
            };
            Box::new(InfHmc::new(target, force, delta_a, delta_b, c.n_steps)?)
        }
        SamplerKind::Multiproposal => {
            if target.reference() != Reference::Lebesgue {
                return Err(McmcError::config(
                    "multiproposal random-walk clouds need a Lebesgue reference; use mpcn for Gaussian references",
                ));
            }
            let scale = c.require(c.step_size, "step_size")?;
            let walk: Arc<dyn TransitionKernel> = Arc::new(GaussianRandomWalkKernel { scale });
            build_multiproposal_with(target, c, walk)?
        }
        SamplerKind::Mpcn => {
            Box::new(MultiProposal::mpcn(target, c.require(c.rho, "rho")?, c.proposals()?)?.parallel(c.parallel))
        }
    })
}

/// Multiproposal with `Q = Q̄ = kernel`, which must be reversible for the target's reference.
pub fn build_multiproposal_with(
    target: SharedTarget,
    config: &SamplerConfig,
    kernel: Arc<dyn TransitionKernel>,
) -> Result<Box<dyn Sampler>> {
    let mp = MultiProposal::new(target, kernel.clone(), kernel, config.proposals()?)?.parallel(config.parallel);
    Ok(Box::new(mp))
}
