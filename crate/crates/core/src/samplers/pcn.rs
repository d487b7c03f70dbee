use crate::error::McmcError;
use crate::hilbert::{sample_prior, CovarianceSpectrum};
use crate::involutive::{metropolis_pair, ChainState, Image, KernelSpec};
use crate::rng::RngStream;
use crate::Result;

use super::{finite_or, Reference, SharedTarget, TargetModel};

pub(crate) fn gaussian_reference(target: &dyn TargetModel) -> Result<CovarianceSpectrum> {
    match target.reference() {
        Reference::Gaussian(c) if c.dim() == target.dim() => Ok(c),
        Reference::Gaussian(c) => Err(McmcError::DimensionMismatch {
            expected: target.dim(),
            actual: c.dim(),
        }),
        Reference::Lebesgue => Err(McmcError::config("sampler needs a Gaussian reference measure")),
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(McmcError::config(format!("rho must lie in [0, 1], got {rho}")))
    }
}

/// `ρ q + √(1 − ρ²) ξ` with `ξ ~ N(0, C)`.
pub(crate) fn pcn_move(q: &[f64], rho: f64, spectrum: &CovarianceSpectrum, rng: &mut RngStream) -> Vec<f64> {
    let beta = (1.0 - rho * rho).sqrt();
    let xi = sample_prior(spectrum, rng);
    q.iter().zip(&xi).map(|(q, x)| rho * q + beta * x).collect()
}

/// pCN: `V(q, ·) = N(ρ q, (1 − ρ²) C)`, swap involution, acceptance `exp(Φ(q) − Φ(v)) ∧ 1`.
#[derive(Clone)]
pub struct Pcn {
    target: SharedTarget,
    spectrum: CovarianceSpectrum,
    rho: f64,
}

impl Pcn {
    pub fn new(target: SharedTarget, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        let spectrum = gaussian_reference(target.as_ref())?;
        Ok(Self { target, spectrum, rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

impl KernelSpec for Pcn {
    type Aux = Vec<f64>;
    type Eval = f64;

    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn evaluate(&self, q: &[f64]) -> Result<f64> {
        finite_or(self.target.log_density(q)?, "log density")
    }

    fn sample_auxiliary(&self, state: &ChainState<f64>, rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(pcn_move(&state.q, self.rho, &self.spectrum, rng))
    }

    fn involution(&self, _j: usize, state: &ChainState<f64>, aux: &Vec<f64>) -> Result<Image<Vec<f64>, f64>> {
        let eval = self.evaluate(aux)?;
        Ok(Image::mapped(aux.clone(), state.q.clone(), eval))
    }

    fn acceptance(
        &self,
        state: &ChainState<f64>,
        _aux: &Vec<f64>,
        images: &[Image<Vec<f64>, f64>],
    ) -> Result<Vec<f64>> {
        if state.eval == f64::NEG_INFINITY {
            return Err(McmcError::UndefinedDensity);
        }
        match &images[0] {
            Image::Mapped { eval, .. } if *eval > f64::NEG_INFINITY => metropolis_pair(eval - state.eval),
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
}
