//! Long-run moment checks of each sampler against an analytic target.

use std::sync::Arc;

use invmcmc_core::diagnostics::{ess, mode_occupancy};
use invmcmc_core::samplers::targets::{GaussianLikelihood, GaussianMixture, GaussianTarget, PriorOnly, WithSurrogate};
use invmcmc_core::samplers::{
    run_chain, GaussianRandomWalkKernel, GradientSource, Hmc, InfHmc, JacobianMode, MetropolisHastings, Mhgj,
    MultiProposal, Pcn, Proposal, SharedTarget, SurrogateForce, TransitionKernel,
};
use invmcmc_core::{ChainRecord, CovarianceSpectrum};

/// `|mean − μ| ≤ 4 σ / √ESS` and the same for the centered second moment.
fn assert_moments(chain: &ChainRecord, burn_in: usize, mean: &[f64], var: &[f64]) {
    for i in 0..mean.len() {
        let x = chain.component(i, burn_in);
        let n_eff = ess(&x).unwrap();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let se = (var[i] / n_eff).sqrt();
        assert!(
            (m - mean[i]).abs() <= 4.0 * se,
            "component {i}: mean {m} vs {} (se {se})",
            mean[i]
        );
        let sq: Vec<f64> = x.iter().map(|v| (v - mean[i]).powi(2)).collect();
        let n_eff2 = ess(&sq).unwrap();
        let m2 = sq.iter().sum::<f64>() / sq.len() as f64;
        let se2 = (2.0 * var[i] * var[i] / n_eff2).sqrt();
        assert!(
            (m2 - var[i]).abs() <= 4.0 * se2,
            "component {i}: var {m2} vs {} (se {se2})",
            var[i]
        );
    }
}

fn per_mode_variance(chain: &ChainRecord, burn_in: usize, i: usize) -> f64 {
    let x = chain.component(i, burn_in);
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[test]
fn rwm_standard_normal() {
    let k = MetropolisHastings::rwm(Arc::new(GaussianTarget::standard(1)), 2.4).unwrap();
    let chain = run_chain(&k, vec![0.0], 100_000, 1).unwrap();
    assert_moments(&chain, 1000, &[0.0], &[1.0]);
}

#[test]
fn rwm_vanishing_scale_accepts_everything() {
    let k = MetropolisHastings::rwm(Arc::new(GaussianTarget::standard(3)), 1e-7).unwrap();
    let chain = run_chain(&k, vec![0.5, -0.5, 1.0], 2000, 2).unwrap();
    assert!(chain.acceptance_rate(0) > 0.999);
}

#[test]
fn mala_and_mhgj_standard_normal() {
    let target: SharedTarget = Arc::new(GaussianTarget::standard(2));
    let mala = MetropolisHastings::new(target.clone(), Proposal::Langevin { step: 1.0 }).unwrap();
    assert_moments(
        &run_chain(&mala, vec![0.0; 2], 50_000, 3).unwrap(),
        500,
        &[0.0; 2],
        &[1.0; 2],
    );
    let mhgj = Mhgj::new(target, 2.0, 0.6, JacobianMode::FiniteDifference).unwrap();
    assert_moments(
        &run_chain(&mhgj, vec![0.0; 2], 50_000, 4).unwrap(),
        500,
        &[0.0; 2],
        &[1.0; 2],
    );
}

#[test]
fn hmc_acceptance_tends_to_one_as_dt_shrinks() {
    let target: SharedTarget = Arc::new(GaussianTarget::standard(5));
    let mut rates = Vec::new();
    for (dt, n) in [(0.5, 2), (0.1, 10), (0.02, 50)] {
        let k = Hmc::new(target.clone(), GradientSource::Exact, dt, n, None).unwrap();
        let chain = run_chain(&k, vec![0.0; 5], 2000, 5).unwrap();
        let mean_alpha = chain.probabilities.iter().map(|p| p[1]).sum::<f64>() / 2000.0;
        rates.push(mean_alpha);
    }
    assert!(rates[0] < rates[1] && rates[1] < rates[2], "{rates:?}");
    assert!(rates[2] > 0.999, "{rates:?}");
}

#[test]
fn hmc_correlated_gaussian_covariance() {
    let cov = [[1.0, 0.6], [0.6, 2.0]];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let precision = vec![
        vec![cov[1][1] / det, -cov[0][1] / det],
        vec![-cov[1][0] / det, cov[0][0] / det],
    ];
    let target = GaussianTarget::new(vec![1.0, -1.0], precision).unwrap();
    let k = Hmc::new(Arc::new(target), GradientSource::Exact, 0.35, 6, None).unwrap();
    let chain = run_chain(&k, vec![1.0, -1.0], 20_000, 6).unwrap();
    let x = chain.component(0, 500);
    let y = chain.component(1, 500);
    assert!(ess(&x).unwrap() >= 2000.0 && ess(&y).unwrap() >= 2000.0);
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cxx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let cyy = y.iter().map(|a| (a - my).powi(2)).sum::<f64>() / n;
    let cxy = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    for (got, want) in [(cxx, 1.0), (cyy, 2.0), (cxy, 0.6)] {
        assert!((got / want - 1.0).abs() < 0.05, "{got} vs {want}");
    }
}

#[test]
fn surrogate_hmc_keeps_the_target() {
    let base: SharedTarget = Arc::new(GaussianTarget::standard(1));
    let exact = Hmc::new(base.clone(), GradientSource::Exact, 0.4, 4, None).unwrap();
    let exact_chain = run_chain(&exact, vec![0.0], 40_000, 7).unwrap();
    for scale in [0.0, 0.5] {
        let target: SharedTarget = Arc::new(WithSurrogate::scaled(base.clone(), scale));
        let k = Hmc::new(target, GradientSource::Surrogate, 0.4, 4, None).unwrap();
        let chain = run_chain(&k, vec![0.0], 40_000, 7).unwrap();
        assert_moments(&chain, 500, &[0.0], &[1.0]);
        assert!(chain.acceptance_rate(0) < exact_chain.acceptance_rate(0));
    }
}

#[test]
fn pcn_and_mpcn_hold_the_prior() {
    let spectrum = CovarianceSpectrum::power_law(4, 1.0).unwrap();
    let prior: SharedTarget = Arc::new(PriorOnly::new(spectrum.clone()));
    let pcn = Pcn::new(prior.clone(), 0.5).unwrap();
    let chain = run_chain(&pcn, vec![0.0; 4], 100_000, 8).unwrap();
    assert_eq!(chain.acceptance_rate(0), 1.0);
    for (i, l) in spectrum.eigenvalues().iter().enumerate() {
        let v = per_mode_variance(&chain, 0, i);
        assert!((v / l - 1.0).abs() < 0.05, "pcn mode {i}: {v} vs {l}");
    }
    let mpcn = MultiProposal::mpcn(prior, 0.5, 4).unwrap();
    let chain = run_chain(&mpcn, vec![0.0; 4], 100_000, 9).unwrap();
    for (i, l) in spectrum.eigenvalues().iter().enumerate() {
        let v = per_mode_variance(&chain, 0, i);
        assert!((v / l - 1.0).abs() < 0.05, "mpcn mode {i}: {v} vs {l}");
    }
}

#[test]
fn mpcn_single_proposal_conjugate_posterior() {
    let spectrum = CovarianceSpectrum::identity(2).unwrap();
    let target = GaussianLikelihood::new(spectrum, vec![1.5, -0.5], vec![0.5, 2.0]).unwrap();
    let (mean, var) = target.posterior();
    let k = MultiProposal::mpcn(Arc::new(target), 0.9, 1).unwrap();
    let chain = run_chain(&k, vec![0.0; 2], 60_000, 10).unwrap();
    assert_moments(&chain, 1000, &mean, &var);
}

#[test]
fn inf_hmc_conjugate_posterior() {
    let spectrum = CovarianceSpectrum::power_law(5, 1.0).unwrap();
    let target = GaussianLikelihood::new(spectrum, vec![0.5, -0.2, 0.3, 0.0, 0.1], vec![0.1; 5]).unwrap();
    let (mean, var) = target.posterior();
    let target: SharedTarget = Arc::new(target);
    let k = InfHmc::new(target.clone(), SurrogateForce::Exact, 0.2, 0.4, 4).unwrap();
    let chain = run_chain(&k, vec![0.0; 5], 30_000, 11).unwrap();
    assert!(chain.acceptance_rate(0) > 0.5);
    assert_moments(&chain, 500, &mean, &var);
    // one step with matched δ's: the ∞MALA configuration
    let mala = InfHmc::new(target, SurrogateForce::Exact, 0.25, 0.5, 1).unwrap();
    assert_moments(&run_chain(&mala, vec![0.0; 5], 30_000, 12).unwrap(), 500, &mean, &var);
}

#[test]
fn multiproposal_visits_both_mixture_components() {
    let target = GaussianMixture::symmetric_1d(3.0, 1.0).unwrap();
    let walk: Arc<dyn TransitionKernel> = Arc::new(GaussianRandomWalkKernel { scale: 2.5 });
    let k = MultiProposal::new(Arc::new(target), walk.clone(), walk, 4).unwrap();
    let chain = run_chain(&k, vec![3.0], 100_000, 13).unwrap();
    let occ = mode_occupancy(chain.post_burn_in(0), &[vec![-3.0], vec![3.0]], 3.0).unwrap();
    assert!(occ.fractions.iter().all(|&f| f >= 0.2), "{occ:?}");
    assert_moments(&chain, 1000, &[0.0], &[10.0]);
}
