//! Samplers assembled as configurations of [`crate::involutive::KernelSpec`].

mod chain;
mod config;
mod hmc;
mod inf_hmc;
mod mh;
mod mhgj;
mod multiproposal;
mod pcn;
pub mod targets;

use std::sync::Arc;

use crate::error::McmcError;
use crate::hilbert::CovarianceSpectrum;
use crate::rng::RngStream;
use crate::Result;

pub use chain::{
    run_chain, run_chain_with, Adaptation, ChainOptions, ChainRecord, DivergencePolicy, DualAveraging, Sampler,
};
pub use config::{build_multiproposal_with, build_sampler, ForceKind, JacobianMode, SamplerConfig, SamplerKind};
pub use hmc::{GradientSource, Hmc, HmcEval};
pub use inf_hmc::{InfHmc, InfHmcEval, SurrogateForce};
pub use mh::{MetropolisHastings, MhEval, Proposal};
pub use mhgj::Mhgj;
pub use multiproposal::{Cloud, GaussianRandomWalkKernel, MultiProposal, PcnKernel};
pub use pcn::Pcn;

/// The dominating measure `μ_0` of a target.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Lebesgue,
    Gaussian(CovarianceSpectrum),
}

/// A target `μ` given by its density against a reference `μ_0`.
///
/// For a Lebesgue reference `log_density` is `log π` up to a constant; for a
/// Gaussian reference it is `−Φ`.
pub trait TargetModel: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, q: &[f64]) -> Result<f64>;

    fn reference(&self) -> Reference {
        Reference::Lebesgue
    }

    fn has_gradient(&self) -> bool {
        false
    }

    /// `∇ log_density`.
    fn gradient(&self, _q: &[f64]) -> Result<Vec<f64>> {
        Err(McmcError::config("target has no gradient"))
    }

    fn has_surrogate_gradient(&self) -> bool {
        false
    }

    /// An approximation of [`TargetModel::gradient`].
    fn surrogate_gradient(&self, _q: &[f64]) -> Result<Vec<f64>> {
        Err(McmcError::config("target has no surrogate gradient"))
    }
}

pub type SharedTarget = Arc<dyn TargetModel>;

fn check_dim(expected: usize, q: &[f64]) -> Result<()> {
    if q.len() == expected {
        Ok(())
    } else {
        Err(McmcError::DimensionMismatch {
            expected,
            actual: q.len(),
        })
    }
}

/// `log π` against Lebesgue measure, folding in a Gaussian reference if present.
pub fn lebesgue_log_density(target: &dyn TargetModel, q: &[f64]) -> Result<f64> {
    let ld = target.log_density(q)?;
    Ok(match target.reference() {
        Reference::Lebesgue => ld,
        Reference::Gaussian(c) => ld + c.log_density(q),
    })
}

/// `∇ log π` against Lebesgue measure, exact or surrogate.
pub fn lebesgue_gradient(target: &dyn TargetModel, q: &[f64], surrogate: bool) -> Result<Vec<f64>> {
    let mut g = if surrogate {
        target.surrogate_gradient(q)?
    } else {
        target.gradient(q)?
    };
    if let Reference::Gaussian(c) = target.reference() {
        for (gi, pi) in g.iter_mut().zip(c.log_density_gradient(q)) {
            *gi += pi;
        }
    }
    Ok(g)
}

/// A Markov transition used to build proposals, e.g. `Q` and `Q̄` of a
/// multiproposal scheme.
pub trait TransitionKernel: Send + Sync {
    fn sample(&self, from: &[f64], rng: &mut RngStream) -> Result<Vec<f64>>;
}

fn finite_or(x: f64, what: &'static str) -> Result<f64> {
    if x.is_nan() {
        Err(McmcError::NonFinite(what))
    } else {
        Ok(x)
    }
}
