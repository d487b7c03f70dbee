use crate::error::McmcError;
use crate::involutive::{metropolis_pair, ChainState, Image, KernelSpec};
use crate::rng::{standard_normal, RngStream};
use crate::Result;

use super::{finite_or, lebesgue_gradient, lebesgue_log_density, SharedTarget};

/// Proposal kernel `V(q, ·)` of a classical MH sampler.
#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    /// `q + scale · ξ`.
    RandomWalk { scale: f64 },
    /// `q + (h/2) ∇log π(q) + √h ξ`.
    Langevin { step: f64 },
    /// `mean + sd ⊙ ξ`, independent of `q`.
    Independent { mean: Vec<f64>, sd: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhEval {
    pub log_density: f64,
    pub gradient: Option<Vec<f64>>,
}

/// `V(q, ·)` from [`Proposal`], the swap `S(q, v) = (v, q)` and acceptance
/// `π(v) r(v, q) / (π(q) r(q, v)) ∧ 1`.
#[derive(Clone)]
pub struct MetropolisHastings {
    target: SharedTarget,
    proposal: Proposal,
}

impl MetropolisHastings {
    pub fn new(target: SharedTarget, proposal: Proposal) -> Result<Self> {
        let k = target.dim();
        match &proposal {
            Proposal::RandomWalk { scale } if !(scale.is_finite() && *scale >= 0.0) => {
                return Err(McmcError::config(format!(
                    "random-walk scale must be nonnegative, got {scale}"
                )))
            }
            Proposal::Langevin { step } => {
                if !(step.is_finite() && *step > 0.0) {
                    return Err(McmcError::config(format!("Langevin step must be positive, got {step}")));
                }
                if !target.has_gradient() {
                    return Err(McmcError::config("Langevin proposal needs a target gradient"));
                }
            }
            Proposal::Independent { mean, sd }
                if mean.len() != k || sd.len() != k || sd.iter().any(|s| !(*s > 0.0)) =>
            {
                return Err(McmcError::config(
                    "independent proposal needs a mean and positive sd per coordinate",
                ));
            }
            _ => {}
        }
        Ok(Self { target, proposal })
    }

    /// The random-walk Metropolis sampler.
    pub fn rwm(target: SharedTarget, scale: f64) -> Result<Self> {
        Self::new(target, Proposal::RandomWalk { scale })
    }

    pub fn proposal(&self) -> &Proposal {
        &self.proposal
    }

    /// `log r(q, v)` up to a constant shared by both directions.
    fn log_proposal(&self, from: &[f64], from_eval: &MhEval, to: &[f64]) -> f64 {
        match &self.proposal {
            Proposal::RandomWalk { .. } => 0.0,
            Proposal::Langevin { step } => {
                let g = from_eval.gradient.as_deref().expect("Langevin eval carries a gradient");
                -from
                    .iter()
                    .zip(g)
                    .zip(to)
                    .map(|((q, g), v)| {
                        let d = v - q - 0.5 * step * g;
                        d * d
                    })
                    .sum::<f64>()
                    / (2.0 * step)
            }
            Proposal::Independent { mean, sd } => -to
                .iter()
                .zip(mean)
                .zip(sd)
                .map(|((v, m), s)| (v - m) * (v - m) / (2.0 * s * s))
                .sum::<f64>(),
        }
    }
}

impl KernelSpec for MetropolisHastings {
    type Aux = Vec<f64>;
    type Eval = MhEval;

    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn evaluate(&self, q: &[f64]) -> Result<MhEval> {
        let log_density = finite_or(lebesgue_log_density(self.target.as_ref(), q)?, "log density")?;
        let gradient = match self.proposal {
            Proposal::Langevin { .. } if log_density.is_finite() => {
                Some(lebesgue_gradient(self.target.as_ref(), q, false)?)
            }
            Proposal::Langevin { .. } => Some(vec![f64::NAN; q.len()]),
            _ => None,
        };
        Ok(MhEval { log_density, gradient })
    }

    fn sample_auxiliary(&self, state: &ChainState<MhEval>, rng: &mut RngStream) -> Result<Vec<f64>> {
        let q = &state.q;
        Ok(match &self.proposal {
            Proposal::RandomWalk { scale } => q.iter().map(|x| x + scale * standard_normal(rng)).collect(),
            Proposal::Langevin { step } => {
                let g = state
                    .eval
                    .gradient
                    .as_deref()
                    .expect("Langevin eval carries a gradient");
                q.iter()
                    .zip(g)
                    .map(|(x, g)| x + 0.5 * step * g + step.sqrt() * standard_normal(rng))
                    .collect()
            }
            Proposal::Independent { mean, sd } => {
                mean.iter().zip(sd).map(|(m, s)| m + s * standard_normal(rng)).collect()
            }
        })
    }

    fn involution(&self, _j: usize, state: &ChainState<MhEval>, aux: &Vec<f64>) -> Result<Image<Vec<f64>, MhEval>> {
        let eval = self.evaluate(aux)?;
        Ok(Image::mapped(aux.clone(), state.q.clone(), eval))
    }

    fn acceptance(
        &self,
        state: &ChainState<MhEval>,
        aux: &Vec<f64>,
        images: &[Image<Vec<f64>, MhEval>],
    ) -> Result<Vec<f64>> {
        if state.eval.log_density == f64::NEG_INFINITY {
            return Err(McmcError::UndefinedDensity);
        }
        let Image::Mapped { eval, .. } = &images[0] else {
            return Ok(vec![1.0, 0.0]);
        };
        if eval.log_density == f64::NEG_INFINITY {
            return Ok(vec![1.0, 0.0]);
        }
        let log_ratio = eval.log_density + self.log_proposal(aux, eval, &state.q)
            - state.eval.log_density
            - self.log_proposal(&state.q, &state.eval, aux);
        metropolis_pair(log_ratio)
    }

    fn flatten(&self, q: &[f64], aux: &Vec<f64>) -> Vec<f64> {
        [q, aux.as_slice()].concat()
    }

    fn unflatten(&self, flat: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = flat.len() / 2;
        (flat[..k].to_vec(), flat[k..].to_vec())
    }

    fn tuning_parameter(&self) -> Option<f64> {
        match self.proposal {
            Proposal::RandomWalk { scale } => Some(scale),
            Proposal::Langevin { step } => Some(step),
            Proposal::Independent { .. } => None,
        }
    }

    fn set_tuning_parameter(&mut self, value: f64) {
        match &mut self.proposal {
            Proposal::RandomWalk { scale } => *scale = value,
            Proposal::Langevin { step } => *step = value,
            Proposal::Independent { .. } => {}
        }
    }
}
