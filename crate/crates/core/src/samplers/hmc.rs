use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::McmcError;
use crate::integrators::{integrate, momentum_flip, Flow, PhasePoint, SplitDynamics, VectorField};
use crate::involutive::{metropolis_pair, ChainState, Image, KernelSpec};
use crate::rng::{standard_normal, RngStream};
use crate::Result;

use super::{finite_or, lebesgue_gradient, lebesgue_log_density, SharedTarget};

/// Which gradient drives the kicks. The acceptance always uses the exact `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    Exact,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcEval {
    /// `log π(q)` against Lebesgue measure.
    pub log_density: f64,
    /// The kick force at `q`.
    pub force: Vec<f64>,
}

/// HMC with `V(q, ·) = N(0, M)`, `S = R ∘ (leapfrog)^n` and acceptance
/// `exp(H(q, v) − H(S(q, v))) ∧ 1`.
#[derive(Clone)]
pub struct Hmc {
    target: SharedTarget,
    source: GradientSource,
    mass: Vec<f64>,
    dynamics: SplitDynamics,
}

fn gradient_field(target: SharedTarget, source: GradientSource) -> VectorField {
    let surrogate = source == GradientSource::Surrogate;
    Arc::new(move |q: &[f64]| {
        lebesgue_gradient(target.as_ref(), q, surrogate).unwrap_or_else(|_| vec![f64::NAN; q.len()])
    })
}

impl Hmc {
    pub fn new(
        target: SharedTarget,
        source: GradientSource,
        step_size: f64,
        n_steps: usize,
        mass: Option<Vec<f64>>,
    ) -> Result<Self> {
        let k = target.dim();
        let ok = match source {
            GradientSource::Exact => target.has_gradient(),
            GradientSource::Surrogate => target.has_surrogate_gradient(),
        };
        if !ok {
            return Err(McmcError::config(format!(
                "HMC with {source:?} gradient: target provides none"
            )));
        }
        if !(step_size.is_finite() && step_size > 0.0) {
            return Err(McmcError::config(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        if n_steps == 0 {
            return Err(McmcError::config("HMC needs at least one leapfrog step"));
        }
        let mass = mass.unwrap_or_else(|| vec![1.0; k]);
        if mass.len() != k || mass.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(McmcError::config(
                "mass must be a positive diagonal of the state dimension",
            ));
        }
        let force = gradient_field(target.clone(), source);
        let dynamics = SplitDynamics::leapfrog(force, Flow::diagonal_mass(&mass), step_size, n_steps)?;
        Ok(Self {
            target,
            source,
            mass,
            dynamics,
        })
    }

    /// Replaces the position update `M⁻¹ v` by another odd flow.
    pub fn with_flow(mut self, flow: Flow) -> Self {
        self.dynamics.flow = flow;
        self
    }

    pub fn dynamics(&self) -> &SplitDynamics {
        &self.dynamics
    }

    pub fn source(&self) -> GradientSource {
        self.source
    }

    pub fn step_size(&self) -> f64 {
        self.dynamics.flow_step
    }

    fn kinetic(&self, v: &[f64]) -> f64 {
        0.5 * v.iter().zip(&self.mass).map(|(v, m)| v * v / m).sum::<f64>()
    }

    /// `H(q, v) = −log π(q) + ½ vᵀ M⁻¹ v`.
    pub fn hamiltonian(&self, log_density: f64, v: &[f64]) -> f64 {
        -log_density + self.kinetic(v)
    }
}

impl KernelSpec for Hmc {
    type Aux = Vec<f64>;
    type Eval = HmcEval;

    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn evaluate(&self, q: &[f64]) -> Result<HmcEval> {
        let log_density = finite_or(lebesgue_log_density(self.target.as_ref(), q)?, "log density")?;
        let force = (self.dynamics.force)(q);
        Ok(HmcEval { log_density, force })
    }

    fn sample_auxiliary(&self, _state: &ChainState<HmcEval>, rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(self.mass.iter().map(|m| m.sqrt() * standard_normal(rng)).collect())
    }

    fn involution(&self, _j: usize, state: &ChainState<HmcEval>, aux: &Vec<f64>) -> Result<Image<Vec<f64>, HmcEval>> {
        let start = PhasePoint::new(state.q.clone(), aux.clone());
        let traj = integrate(&start, &self.dynamics, Some(state.eval.force.clone()), false)?;
        let end = momentum_flip(&traj.end);
        let log_density = finite_or(lebesgue_log_density(self.target.as_ref(), &end.q)?, "log density")?;
        Ok(Image::mapped(
            end.q,
            end.v,
            HmcEval {
                log_density,
                force: traj.end_force,
            },
        ))
    }

    fn acceptance(
        &self,
        state: &ChainState<HmcEval>,
        aux: &Vec<f64>,
        images: &[Image<Vec<f64>, HmcEval>],
    ) -> Result<Vec<f64>> {
        if state.eval.log_density == f64::NEG_INFINITY {
            return Err(McmcError::UndefinedDensity);
        }
        match &images[0] {
            Image::Mapped { aux: v, eval, .. } if eval.log_density > f64::NEG_INFINITY => {
                let dh = self.hamiltonian(state.eval.log_density, aux) - self.hamiltonian(eval.log_density, v);
                metropolis_pair(dh)
            }
            _ => Ok(vec![1.0, 0.0]),
        }
    }

    fn flatten(&self, q: &[f64], aux: &Vec<f64>) -> Vec<f64> {
        [q, aux.as_slice()].concat()
    }

    fn unflatten(&self, flat: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = flat.len() / 2;
        (flat[..k].to_vec(), flat[k..].to_vec())
    }

    fn tuning_parameter(&self) -> Option<f64> {
        Some(self.dynamics.flow_step)
    }

    fn set_tuning_parameter(&mut self, value: f64) {
        self.dynamics.flow_step = value;
        self.dynamics.kick_step = value / 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::involutive::{check_involution, kernel_involution_map, master_step};
    use crate::rng::{standard_normal_vec, stream, Purpose};
    use crate::samplers::targets::{GaussianTarget, WithSurrogate};

    #[test]
    fn hand_step_is_accepted() {
        let k = Hmc::new(
            Arc::new(GaussianTarget::standard(1)),
            GradientSource::Exact,
            0.1,
            1,
            None,
        )
        .unwrap();
        let state = k.initial_state(vec![1.0]).unwrap();
        let aux = vec![0.0];
        let image = k.involution(1, &state, &aux).unwrap();
        match &image {
            Image::Mapped { q, aux, .. } => {
                assert!((q[0] - 0.995).abs() < 1e-15);
                assert!((aux[0] - 0.09975).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        let probs = k.acceptance(&state, &aux, &[image]).unwrap();
        assert_eq!(probs, vec![0.0, 1.0]);
    }

    #[test]
    fn exact_surrogate_gives_identical_trace() {
        let base: SharedTarget =
            Arc::new(GaussianTarget::new(vec![0.5, -0.5], vec![vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap());
        let target: SharedTarget = Arc::new(WithSurrogate::scaled(base, 1.0));
        let a = Hmc::new(target.clone(), GradientSource::Exact, 0.3, 5, None).unwrap();
        let b = Hmc::new(target, GradientSource::Surrogate, 0.3, 5, None).unwrap();
        let (mut ra, mut rb) = (stream(9, 0, Purpose::Chain), stream(9, 0, Purpose::Chain));
        let (mut sa, mut sb) = (
            a.initial_state(vec![0.0, 0.0]).unwrap(),
            b.initial_state(vec![0.0, 0.0]).unwrap(),
        );
        for _ in 0..200 {
            let x = master_step(&a, &sa, &mut ra).unwrap();
            let y = master_step(&b, &sb, &mut rb).unwrap();
            assert_eq!(x, y);
            sa = x.next_state;
            sb = y.next_state;
        }
    }

    #[test]
    fn leapfrog_kernel_is_an_involution() {
        let k = Hmc::new(
            Arc::new(GaussianTarget::standard(5)),
            GradientSource::Exact,
            0.2,
            10,
            Some(vec![1.0, 2.0, 0.5, 1.0, 3.0]),
        )
        .unwrap();
        let mut rng = stream(3, 0, Purpose::Check);
        let points: Vec<Vec<f64>> = (0..100).map(|_| standard_normal_vec(&mut rng, 10)).collect();
        let report = check_involution(kernel_involution_map(&k, 1), &points, 1e-10).unwrap();
        assert!(report.passed, "{}", report.max_deviation);
    }

    #[test]
    fn non_odd_flow_breaks_involution() {
        let skewed: VectorField = Arc::new(|v: &[f64]| v.iter().map(|x| x + 0.3).collect());
        let k = Hmc::new(
            Arc::new(GaussianTarget::standard(2)),
            GradientSource::Exact,
            0.2,
            4,
            None,
        )
        .unwrap()
        .with_flow(Flow::Drift(skewed));
        assert!(k.dynamics().check_odd_flow(&[vec![1.0, 2.0]], 1e-12).is_err());
        let mut rng = stream(3, 1, Purpose::Check);
        let points: Vec<Vec<f64>> = (0..100).map(|_| standard_normal_vec(&mut rng, 4)).collect();
        let report = check_involution(kernel_involution_map(&k, 1), &points, 1e-10).unwrap();
        assert!(!report.passed);
    }
}
