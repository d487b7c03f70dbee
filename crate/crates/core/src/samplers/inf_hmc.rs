use std::fmt;
use std::sync::Arc;

use crate::error::McmcError;
use crate::hilbert::{cameron_martin_terms, sample_prior, CovarianceSpectrum, TrajectoryLog};
use crate::integrators::{integrate, momentum_flip, Flow, PhasePoint, SplitDynamics, VectorField};
use crate::involutive::{metropolis_pair, ChainState, Image, KernelSpec};
use crate::rng::RngStream;
use crate::Result;

use super::pcn::gaussian_reference;
use super::{finite_or, SharedTarget};

/// The map `f` standing in for `C DΦ` in the kicks.
#[derive(Clone)]
pub enum SurrogateForce {
    /// `f = C DΦ` from the exact gradient.
    Exact,
    /// `f = −C · surrogate_gradient`.
    Surrogate,
    /// `f ≡ 0`: pure rotations.
    Zero,
    Custom(VectorField),
}

impl fmt::Debug for SurrogateForce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurrogateForce::Exact => f.write_str("Exact"),
            SurrogateForce::Surrogate => f.write_str("Surrogate"),
            SurrogateForce::Zero => f.write_str("Zero"),
            SurrogateForce::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfHmcEval {
    /// `−Φ(q)`.
    pub log_density: f64,
    /// `f(q)`.
    pub f: Vec<f64>,
}

/// Surrogate ∞HMC with `Ψ ≡ 0`, so `V = μ_0`.
///
/// Each palindromic step kicks by `δ_a` with `−f`, rotates by `δ_b`, kicks
/// again. The acceptance exponent is evaluated along the path.
#[derive(Clone)]
pub struct InfHmc {
    target: SharedTarget,
    spectrum: CovarianceSpectrum,
    dynamics: SplitDynamics,
    f: VectorField,
}

impl InfHmc {
    pub fn new(
        target: SharedTarget,
        force: SurrogateForce,
        delta_a: f64,
        delta_b: f64,
        n_steps: usize,
    ) -> Result<Self> {
        let spectrum = gaussian_reference(target.as_ref())?;
        let f: VectorField = match force {
            SurrogateForce::Exact | SurrogateForce::Surrogate => {
                let surrogate = matches!(force, SurrogateForce::Surrogate);
                let available = if surrogate {
                    target.has_surrogate_gradient()
                } else {
                    target.has_gradient()
                };
                if !available {
                    return Err(McmcError::config(format!(
                        "∞HMC with {force:?} force: target provides no gradient"
                    )));
                }
                let (t, c) = (target.clone(), spectrum.clone());
                Arc::new(move |q: &[f64]| {
                    let g = if surrogate {
                        t.surrogate_gradient(q)
                    } else {
                        t.gradient(q)
                    };
                    match g {
                        Ok(g) => c.apply(&g).into_iter().map(|x| -x).collect(),
                        Err(_) => vec![f64::NAN; q.len()],
                    }
                })
            }
            SurrogateForce::Zero => Arc::new(|q: &[f64]| vec![0.0; q.len()]),
            SurrogateForce::Custom(f) => f,
        };
        let g = f.clone();
        let kick: VectorField = Arc::new(move |q: &[f64]| g(q).into_iter().map(|x| -x).collect());
        let dynamics = SplitDynamics::new(kick, Flow::Rotation, delta_a, delta_b, n_steps)?;
        Ok(Self {
            target,
            spectrum,
            dynamics,
            f,
        })
    }

    pub fn spectrum(&self) -> &CovarianceSpectrum {
        &self.spectrum
    }

    pub fn dynamics(&self) -> &SplitDynamics {
        &self.dynamics
    }

    /// Runs the trajectory from `(q, v)` and returns its log plus `log α̂`.
    pub fn trajectory(&self, state: &ChainState<InfHmcEval>, v: &[f64]) -> Result<(TrajectoryLog, f64, InfHmcEval)> {
        let start = PhasePoint::new(state.q.clone(), v.to_vec());
        let initial_force = state.eval.f.iter().map(|x| -x).collect();
        let traj = integrate(&start, &self.dynamics, Some(initial_force), true)?;
        let log = TrajectoryLog {
            states: traj.states,
            surrogate: traj.forces.iter().map(|f| f.iter().map(|x| -x).collect()).collect(),
            delta_a: self.dynamics.kick_step,
            delta_b: self.dynamics.flow_step,
        };
        let end_density = finite_or(self.target.log_density(&traj.end.q)?, "log density")?;
        let end_eval = InfHmcEval {
            log_density: end_density,
            f: traj.end_force.iter().map(|x| -x).collect(),
        };
        if end_density == f64::NEG_INFINITY {
            return Ok((log, f64::NEG_INFINITY, end_eval));
        }
        // Φ(q_0) − Φ(q_n) with Φ = −log_density
        let boundary = end_density - state.eval.log_density;
        let log_alpha = cameron_martin_terms(&log, boundary, &self.spectrum)?.total();
        Ok((log, log_alpha, end_eval))
    }
}

impl KernelSpec for InfHmc {
    type Aux = Vec<f64>;
    type Eval = InfHmcEval;

    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn evaluate(&self, q: &[f64]) -> Result<InfHmcEval> {
        let log_density = finite_or(self.target.log_density(q)?, "log density")?;
        Ok(InfHmcEval {
            log_density,
            f: (self.f)(q),
        })
    }

    fn sample_auxiliary(&self, _state: &ChainState<InfHmcEval>, rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(sample_prior(&self.spectrum, rng))
    }

    fn involution(
        &self,
        _j: usize,
        state: &ChainState<InfHmcEval>,
        aux: &Vec<f64>,
    ) -> Result<Image<Vec<f64>, InfHmcEval>> {
        let (log, log_alpha, eval) = self.trajectory(state, aux)?;
        let end = momentum_flip(log.states.last().expect("trajectory has a start state"));
        Ok(Image::Mapped {
            q: end.q,
            aux: end.v,
            eval,
            log_rn: Some(log_alpha),
        })
    }

    fn acceptance(
        &self,
        state: &ChainState<InfHmcEval>,
        _aux: &Vec<f64>,
        images: &[Image<Vec<f64>, InfHmcEval>],
    ) -> Result<Vec<f64>> {
        if state.eval.log_density == f64::NEG_INFINITY {
            return Err(McmcError::UndefinedDensity);
        }
        match &images[0] {
            Image::Mapped { log_rn: Some(l), .. } => metropolis_pair(*l),
            Image::Mapped { log_rn: None, .. } => Err(McmcError::config("∞HMC image lacks its acceptance exponent")),
            Image::Diverged { .. } => Ok(vec![1.0, 0.0]),
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

    /// Rescales `δ_b` to `value`, keeping `δ_a / δ_b` fixed.
    fn set_tuning_parameter(&mut self, value: f64) {
        let ratio = if self.dynamics.flow_step > 0.0 {
            self.dynamics.kick_step / self.dynamics.flow_step
        } else {
            0.5
        };
        self.dynamics.flow_step = value;
        self.dynamics.kick_step = ratio * value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::whitened_dot;
    use crate::involutive::master_step;
    use crate::rng::{stream, Purpose};
    use crate::samplers::targets::{GaussianLikelihood, PriorOnly};

    #[test]
    fn pure_rotation_always_accepts() {
        let k = InfHmc::new(
            Arc::new(PriorOnly::new(CovarianceSpectrum::power_law(6, 1.0).unwrap())),
            SurrogateForce::Zero,
            0.1,
            0.3,
            7,
        )
        .unwrap();
        let mut rng = stream(1, 0, Purpose::Chain);
        let mut s = k.initial_state(vec![0.1; 6]).unwrap();
        for _ in 0..50 {
            let r = master_step(&k, &s, &mut rng).unwrap();
            assert!((r.probabilities[1] - 1.0).abs() < 1e-15);
            s = r.next_state;
        }
    }

    #[test]
    fn zero_steps_keep_the_state() {
        let target = GaussianLikelihood::new(
            CovarianceSpectrum::power_law(3, 1.0).unwrap(),
            vec![1.0; 3],
            vec![0.5; 3],
        )
        .unwrap();
        let k = InfHmc::new(Arc::new(target), SurrogateForce::Exact, 0.1, 0.2, 0).unwrap();
        let mut rng = stream(2, 0, Purpose::Chain);
        let s = k.initial_state(vec![0.3, 0.2, 0.1]).unwrap();
        let r = master_step(&k, &s, &mut rng).unwrap();
        assert_eq!(r.probabilities[1], 1.0);
        assert_eq!(r.next_state.q, s.q);
    }

    #[test]
    fn acceptance_matches_finite_dimensional_energy() {
        let spectrum = CovarianceSpectrum::power_law(5, 1.0).unwrap();
        let target = GaussianLikelihood::new(
            spectrum.clone(),
            vec![0.5, -0.3, 0.2, 0.0, 0.1],
            vec![0.4, 1.0, 0.3, 2.0, 0.7],
        )
        .unwrap();
        let phi = |q: &[f64]| -crate::samplers::TargetModel::log_density(&target, q).unwrap();
        let k = InfHmc::new(Arc::new(target.clone()), SurrogateForce::Exact, 0.05, 0.1, 4).unwrap();
        let mut rng = stream(3, 0, Purpose::Check);
        for _ in 0..20 {
            let s = k.initial_state(sample_prior(&spectrum, &mut rng)).unwrap();
            let v = sample_prior(&spectrum, &mut rng);
            let (log, log_alpha, _) = k.trajectory(&s, &v).unwrap();
            let h = |p: &PhasePoint| {
                0.5 * whitened_dot(&p.q, &p.q, &spectrum) + 0.5 * whitened_dot(&p.v, &p.v, &spectrum) + phi(&p.q)
            };
            let want = h(&log.states[0]) - h(log.states.last().unwrap());
            assert!((log_alpha - want).abs() < 1e-10, "{log_alpha} vs {want}");
        }
    }
}
