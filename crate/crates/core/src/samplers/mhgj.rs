use crate::error::McmcError;
use crate::integrators::jacobian_abs_det_fd;
use crate::involutive::{metropolis_pair, mhgj_log_ratio, ChainState, Image, KernelSpec};
use crate::rng::{standard_normal, RngStream};
use crate::Result;

use super::config::JacobianMode;
use super::{finite_or, lebesgue_log_density, SharedTarget};

/// General-state MH with the involution `S(q, v) = (c v, q / c)` and
/// `V(q, ·) = N(q / c, s² I)`.
///
/// The acceptance is `π(q′) r(q′, v′) |det ∇S| / (π(q) r(q, v)) ∧ 1` with the
/// Jacobian taken from [`JacobianMode`].
#[derive(Clone)]
pub struct Mhgj {
    target: SharedTarget,
    c: f64,
    s: f64,
    jacobian: JacobianMode,
}

impl Mhgj {
    pub fn new(target: SharedTarget, c: f64, s: f64, jacobian: JacobianMode) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) || !(s.is_finite() && s > 0.0) {
            return Err(McmcError::config(format!("MHGJ needs c > 0 and s > 0, got ({c}, {s})")));
        }
        if jacobian == JacobianMode::FiniteDifference && 2 * target.dim() > 20 {
            return Err(McmcError::config(
                "finite-difference Jacobian limited to 10 state dimensions",
            ));
        }
        Ok(Self { target, c, s, jacobian })
    }

    fn map(&self, q: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            v.iter().map(|x| self.c * x).collect(),
            q.iter().map(|x| x / self.c).collect(),
        )
    }

    fn log_r(&self, q: &[f64], v: &[f64]) -> f64 {
        -q.iter()
            .zip(v)
            .map(|(q, v)| {
                let d = v - q / self.c;
                d * d
            })
            .sum::<f64>()
            / (2.0 * self.s * self.s)
    }

    fn abs_det(&self, q: &[f64], v: &[f64]) -> Result<f64> {
        match self.jacobian {
            JacobianMode::Unit => Ok(1.0),
            JacobianMode::Analytic => {
                let k = q.len() as i32;
                Ok(self.c.powi(k) * self.c.powi(-k))
            }
            JacobianMode::FiniteDifference => {
                let k = q.len();
                let point = [q, v].concat();
                jacobian_abs_det_fd(
                    |x: &[f64]| {
                        let (a, b) = self.map(&x[..k], &x[k..]);
                        Ok([a, b].concat())
                    },
                    &point,
                    None,
                )
            }
        }
    }
}

impl KernelSpec for Mhgj {
    type Aux = Vec<f64>;
    type Eval = f64;

    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn evaluate(&self, q: &[f64]) -> Result<f64> {
        finite_or(lebesgue_log_density(self.target.as_ref(), q)?, "log density")
    }

    fn sample_auxiliary(&self, state: &ChainState<f64>, rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(state
            .q
            .iter()
            .map(|q| q / self.c + self.s * standard_normal(rng))
            .collect())
    }

    fn involution(&self, _j: usize, state: &ChainState<f64>, aux: &Vec<f64>) -> Result<Image<Vec<f64>, f64>> {
        let (q, v) = self.map(&state.q, aux);
        let eval = self.evaluate(&q)?;
        Ok(Image::mapped(q, v, eval))
    }

    fn acceptance(&self, state: &ChainState<f64>, aux: &Vec<f64>, images: &[Image<Vec<f64>, f64>]) -> Result<Vec<f64>> {
        let Image::Mapped { q, aux: v, eval, .. } = &images[0] else {
            return Ok(vec![1.0, 0.0]);
        };
        let log_g = state.eval + self.log_r(&state.q, aux);
        let log_g_mapped = eval + self.log_r(q, v);
        if log_g_mapped == f64::NEG_INFINITY {
            return Ok(vec![1.0, 0.0]);
        }
        let det = self.abs_det(&state.q, aux)?;
        metropolis_pair(mhgj_log_ratio(log_g, log_g_mapped, det)?)
    }

    fn flatten(&self, q: &[f64], aux: &Vec<f64>) -> Vec<f64> {
        [q, aux.as_slice()].concat()
    }

    fn unflatten(&self, flat: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = flat.len() / 2;
        (flat[..k].to_vec(), flat[k..].to_vec())
    }

    fn tuning_parameter(&self) -> Option<f64> {
        Some(self.s)
    }

    fn set_tuning_parameter(&mut self, value: f64) {
        self.s = value;
    }
}
