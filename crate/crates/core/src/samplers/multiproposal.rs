use std::sync::Arc;

use rayon::prelude::*;

use crate::error::McmcError;
use crate::hilbert::CovarianceSpectrum;
use crate::involutive::{barker_weights_log, ChainState, Image, KernelSpec};
use crate::rng::{standard_normal, RngStream};
use crate::Result;

use super::pcn::{check_rho, gaussian_reference, pcn_move};
use super::{finite_or, SharedTarget, TransitionKernel};

/// `q + scale · ξ`; reversible for Lebesgue measure.
#[derive(Debug, Clone)]
pub struct GaussianRandomWalkKernel {
    pub scale: f64,
}

impl TransitionKernel for GaussianRandomWalkKernel {
    fn sample(&self, from: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(from.iter().map(|x| x + self.scale * standard_normal(rng)).collect())
    }
}

/// The pCN kernel `N(ρ q, (1 − ρ²) C)`; reversible for `N(0, C)`.
#[derive(Debug, Clone)]
pub struct PcnKernel {
    pub rho: f64,
    pub spectrum: CovarianceSpectrum,
}

impl TransitionKernel for PcnKernel {
    fn sample(&self, from: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(pcn_move(from, self.rho, &self.spectrum, rng))
    }
}

/// The proposal cloud `(q_1, …, q_p)` with cached `log dμ/dμ_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    pub points: Vec<Vec<f64>>,
    pub log_densities: Vec<f64>,
}

/// Conditionally independent multiproposal with Barker weights.
///
/// A pivot `q̄ ~ Q̄(q_0, ·)` is drawn, then `q_1, …, q_p ~ Q(q̄, ·)` i.i.d.;
/// `S_j` swaps slots `0` and `j`; `α̂_j ∝ dμ/dμ_0 (q_j)`. The pair `(Q, Q̄)`
/// must satisfy `Q(q, dq̃) μ_0(dq) = Q̄(q̃, dq) μ_0(dq̃)`.
#[derive(Clone)]
pub struct MultiProposal {
    target: SharedTarget,
    pivot: Arc<dyn TransitionKernel>,
    cloud: Arc<dyn TransitionKernel>,
    p: usize,
    parallel: bool,
}

impl MultiProposal {
    pub fn new(
        target: SharedTarget,
        cloud: Arc<dyn TransitionKernel>,
        pivot: Arc<dyn TransitionKernel>,
        p: usize,
    ) -> Result<Self> {
        if p == 0 {
            return Err(McmcError::config("proposal count must be at least 1"));
        }
        Ok(Self {
            target,
            pivot,
            cloud,
            p,
            parallel: false,
        })
    }

    /// Multiproposal pCN: `Q = Q̄` the pCN kernel of the target's Gaussian reference.
    pub fn mpcn(target: SharedTarget, rho: f64, p: usize) -> Result<Self> {
        check_rho(rho)?;
        let spectrum = gaussian_reference(target.as_ref())?;
        let kernel: Arc<dyn TransitionKernel> = Arc::new(PcnKernel { rho, spectrum });
        Self::new(target, kernel.clone(), kernel, p)
    }

    /// Evaluates the cloud densities on the rayon pool.
    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    fn log_densities(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let eval = |q: &Vec<f64>| finite_or(self.target.log_density(q)?, "log density");
        if self.parallel {
            points.par_iter().map(eval).collect()
        } else {
            points.iter().map(eval).collect()
        }
    }
}

impl KernelSpec for MultiProposal {
    type Aux = Cloud;
    type Eval = f64;

    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn proposal_count(&self) -> usize {
        self.p
    }

    fn evaluate(&self, q: &[f64]) -> Result<f64> {
        finite_or(self.target.log_density(q)?, "log density")
    }

    fn sample_auxiliary(&self, state: &ChainState<f64>, rng: &mut RngStream) -> Result<Cloud> {
        let pivot = self.pivot.sample(&state.q, rng)?;
        let points = (0..self.p)
            .map(|_| self.cloud.sample(&pivot, rng))
            .collect::<Result<Vec<_>>>()?;
        let log_densities = self.log_densities(&points)?;
        Ok(Cloud { points, log_densities })
    }

    fn involution(&self, j: usize, state: &ChainState<f64>, aux: &Cloud) -> Result<Image<Cloud, f64>> {
        let mut swapped = aux.clone();
        swapped.points[j - 1] = state.q.clone();
        swapped.log_densities[j - 1] = state.eval;
        Ok(Image::mapped(
            aux.points[j - 1].clone(),
            swapped,
            aux.log_densities[j - 1],
        ))
    }

    fn acceptance(&self, state: &ChainState<f64>, aux: &Cloud, _images: &[Image<Cloud, f64>]) -> Result<Vec<f64>> {
        let mut logs = Vec::with_capacity(self.p + 1);
        logs.push(state.eval);
        logs.extend_from_slice(&aux.log_densities);
        barker_weights_log(&logs)
    }

    fn flatten(&self, q: &[f64], aux: &Cloud) -> Vec<f64> {
        let mut flat = q.to_vec();
        for p in &aux.points {
            flat.extend_from_slice(p);
        }
        flat
    }

    fn unflatten(&self, flat: &[f64]) -> (Vec<f64>, Cloud) {
        let k = self.dim();
        let points: Vec<Vec<f64>> = flat[k..].chunks(k).map(|c| c.to_vec()).collect();
        let log_densities = points
            .iter()
            .map(|p| self.target.log_density(p).unwrap_or(f64::NAN))
            .collect();
        (flat[..k].to_vec(), Cloud { points, log_densities })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::{multiproposal_kernel_matrix, uniform_other_proposal, DiscreteTransition};
    use crate::involutive::{check_involution, kernel_involution_map, master_step};
    use crate::rng::{standard_normal_vec, stream, Purpose};
    use crate::samplers::targets::{DiscreteTarget, GaussianTarget, PriorOnly};

    #[test]
    fn constant_potential_gives_uniform_weights() {
        let k = MultiProposal::mpcn(
            Arc::new(PriorOnly::new(CovarianceSpectrum::power_law(3, 1.0).unwrap())),
            0.5,
            5,
        )
        .unwrap();
        let mut rng = stream(1, 0, Purpose::Chain);
        let s = k.initial_state(vec![0.0; 3]).unwrap();
        let r = master_step(&k, &s, &mut rng).unwrap();
        for a in &r.probabilities {
            assert!((a - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_target_single_proposal_is_a_coin_flip() {
        let walk: Arc<dyn TransitionKernel> = Arc::new(GaussianRandomWalkKernel { scale: 1.0 });
        let flat = PriorOnly::new(CovarianceSpectrum::identity(1).unwrap());
        let k = MultiProposal::new(Arc::new(flat), walk.clone(), walk, 1).unwrap();
        let s = k.initial_state(vec![0.0]).unwrap();
        let r = master_step(&k, &s, &mut stream(2, 0, Purpose::Chain)).unwrap();
        assert_eq!(r.probabilities, vec![0.5, 0.5]);
    }

    #[test]
    fn slot_swaps_are_involutions() {
        let walk: Arc<dyn TransitionKernel> = Arc::new(GaussianRandomWalkKernel { scale: 1.0 });
        let k = MultiProposal::new(Arc::new(GaussianTarget::standard(2)), walk.clone(), walk, 4).unwrap();
        let mut rng = stream(3, 0, Purpose::Check);
        let points: Vec<Vec<f64>> = (0..100).map(|_| standard_normal_vec(&mut rng, 10)).collect();
        for j in 1..=4 {
            let report = check_involution(kernel_involution_map(&k, j), &points, 0.0).unwrap();
            assert!(report.passed);
        }
    }

    #[test]
    fn parallel_evaluation_is_bit_identical() {
        let spectrum = CovarianceSpectrum::power_law(4, 1.0).unwrap();
        let target: SharedTarget =
            Arc::new(crate::samplers::targets::GaussianLikelihood::new(spectrum, vec![1.0; 4], vec![0.2; 4]).unwrap());
        let a = MultiProposal::mpcn(target.clone(), 0.7, 8).unwrap();
        let b = MultiProposal::mpcn(target, 0.7, 8).unwrap().parallel(true);
        let (mut ra, mut rb) = (stream(4, 0, Purpose::Chain), stream(4, 0, Purpose::Chain));
        let mut s = a.initial_state(vec![0.0; 4]).unwrap();
        for _ in 0..50 {
            let x = master_step(&a, &s, &mut ra).unwrap();
            let y = master_step(&b, &s, &mut rb).unwrap();
            assert_eq!(x, y);
            s = x.next_state;
        }
    }

    #[test]
    fn discrete_single_proposal_matches_enumeration() {
        let pmf = vec![0.2, 0.3, 0.5];
        let q = uniform_other_proposal(3);
        let kernel = multiproposal_kernel_matrix(&pmf, &[1.0; 3], &q, &q, 1).unwrap();
        let walk: Arc<dyn TransitionKernel> = Arc::new(DiscreteTransition::new(q).unwrap());
        let k = MultiProposal::new(Arc::new(DiscreteTarget::new(pmf).unwrap()), walk.clone(), walk, 1).unwrap();
        let mut rng = stream(5, 0, Purpose::Chain);
        let mut counts = [[0usize; 3]; 3];
        let mut s = k.initial_state(vec![0.0]).unwrap();
        let n = 60_000;
        for _ in 0..n {
            let r = master_step(&k, &s, &mut rng).unwrap();
            counts[s.q[0] as usize][r.next_state.q[0] as usize] += 1;
            s = r.next_state;
        }
        for i in 0..3 {
            let row: usize = counts[i].iter().sum();
            for j in 0..3 {
                let p = kernel[i][j];
                let se = (p * (1.0 - p) / row as f64).sqrt().max(1e-12);
                let freq = counts[i][j] as f64 / row as f64;
                assert!((freq - p).abs() <= 4.0 * se + 1e-12, "{i}{j}: {freq} vs {p}");
            }
        }
    }
}
