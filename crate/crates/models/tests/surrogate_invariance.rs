//! Surrogate-gradient HMC keeps the exact posterior: moments agree with
//! exact-gradient HMC within 4 ESS-adjusted standard errors.

use std::sync::Arc;

use invmcmc_core::diagnostics::compare_moments;
use invmcmc_core::samplers::ChainOptions;
use invmcmc_core::samplers::{GradientSource, Hmc, Sampler, SharedTarget};
use invmcmc_core::ChainRecord;
use invmcmc_models::bmds::{pairwise_distances, simulate, BmdsPosterior};
use invmcmc_models::ctmc::synthetic_posterior;

const BURN_IN: usize = 500;

fn hmc_chain(target: SharedTarget, source: GradientSource, initial: Vec<f64>, n: usize, seed: u64) -> ChainRecord {
    let mut k = Hmc::new(target, source, 0.05, 8, None).unwrap();
    k.run(initial, &ChainOptions::new(n, seed).adapt(BURN_IN, 0.7)).unwrap()
}

fn assert_agree(name: &str, a: &[f64], b: &[f64]) {
    let c = compare_moments(a, b).unwrap();
    assert!(c.within(4.0), "{name}: {c:?}");
}

#[test]
fn ctmc_first_order_surrogate_matches_exact() {
    let (truth, posterior) = synthetic_posterior(3, 500, 11).unwrap();
    let target: SharedTarget = Arc::new(posterior);
    let start = truth.theta();
    let exact = hmc_chain(target.clone(), GradientSource::Exact, start.clone(), 4000, 1);
    let surrogate = hmc_chain(target, GradientSource::Surrogate, start, 4000, 2);
    assert!(surrogate.acceptance_rate(BURN_IN) > 0.2);
    for i in 0..truth.parameter_count() {
        assert_agree(
            &format!("θ_{i}"),
            &exact.component(i, BURN_IN),
            &surrogate.component(i, BURN_IN),
        );
    }
}

#[test]
fn bmds_band_surrogate_matches_full() {
    let (n, d, sigma2) = (20, 2, 0.25);
    let (truth, delta) = simulate(n, d, sigma2, 12).unwrap();
    let target: SharedTarget = Arc::new(BmdsPosterior::new(Arc::new(delta), d, sigma2, 17).unwrap());
    let start = truth.flat().to_vec();
    let full = hmc_chain(target.clone(), GradientSource::Exact, start.clone(), 4000, 3);
    let band = hmc_chain(target, GradientSource::Surrogate, start, 4000, 4);
    // the likelihood is rotation invariant, so compare distances
    let functionals = |c: &ChainRecord| -> Vec<Vec<f64>> {
        let dist: Vec<Vec<f64>> = c
            .post_burn_in(BURN_IN)
            .iter()
            .map(|x| pairwise_distances(x, n, d))
            .collect();
        let norm2 = c
            .post_burn_in(BURN_IN)
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum())
            .collect();
        let mut out: Vec<Vec<f64>> = [0, 7, 41, 150]
            .iter()
            .map(|&p| dist.iter().map(|r| r[p]).collect())
            .collect();
        out.push(norm2);
        out
    };
    for (i, (a, b)) in functionals(&full).iter().zip(functionals(&band)).enumerate() {
        assert_agree(&format!("functional {i}"), a, &b);
    }
}
