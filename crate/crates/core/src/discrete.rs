//! Finite state spaces: exact kernel enumeration and a discrete MH kernel.
//!
//! States are indices `0..n`; inside a [`KernelSpec`] they travel as a
//! one-element `StateVector` holding the index as `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::McmcError;
use crate::involutive::{barker_weights, mh_probability, ChainState, Image, KernelSpec};
use crate::rng::RngStream;
use crate::samplers::TransitionKernel;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceRule {
    Metropolis,
    Barker,
    /// Always accepts; not reversible. Negative control only.
    Corrupted,
}

impl AcceptanceRule {
    /// `α̂_1` given the forward and reverse flux `π_i Q_ij` and `π_j Q_ji`.
    fn accept(self, forward: f64, reverse: f64) -> Result<f64> {
        match self {
            AcceptanceRule::Metropolis => {
                if forward == 0.0 {
                    return Err(McmcError::UndefinedDensity);
                }
                mh_probability(reverse / forward)
            }
            AcceptanceRule::Barker => Ok(barker_weights(&[forward, reverse])?[1]),
            AcceptanceRule::Corrupted => Ok(1.0),
        }
    }
}

fn check_stochastic(m: &[Vec<f64>], n: usize, what: &str) -> Result<()> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(McmcError::config(format!("{what} must be {n}x{n}")));
    }
    for row in m {
        if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(McmcError::config(format!("{what} has entries outside [0, 1]")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(McmcError::config(format!("{what} row sums to {s}")));
        }
    }
    Ok(())
}

/// Uniform proposal over the other `n − 1` states.
pub fn uniform_other_proposal(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { 1.0 / (n - 1) as f64 })
                .collect()
        })
        .collect()
}

/// Exact single-proposal kernel matrix for target `pmf` and proposal matrix `Q`.
pub fn mh_kernel_matrix(pmf: &[f64], proposal: &[Vec<f64>], rule: AcceptanceRule) -> Result<Vec<Vec<f64>>> {
    let n = pmf.len();
    check_stochastic(proposal, n, "proposal")?;
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut moved = 0.0;
        for j in 0..n {
            if i == j || proposal[i][j] == 0.0 {
                continue;
            }
            let forward = pmf[i] * proposal[i][j];
            let reverse = pmf[j] * proposal[j][i];
            let a = if pmf[i] == 0.0 {
                1.0
            } else {
                rule.accept(forward, reverse)?
            };
            k[i][j] = proposal[i][j] * a;
            moved += k[i][j];
        }
        k[i][i] = 1.0 - moved;
    }
    Ok(k)
}

/// Exact kernel of the conditionally independent multiproposal scheme with
/// Barker weights: pivot `m ~ Q̄(i, ·)`, cloud `j_1..j_p ~ Q(m, ·)` i.i.d.,
/// weights `π/μ_0` at `(i, j_1, …, j_p)`.
pub fn multiproposal_kernel_matrix(
    pmf: &[f64],
    reference: &[f64],
    cloud: &[Vec<f64>],
    pivot: &[Vec<f64>],
    p: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = pmf.len();
    if p == 0 {
        return Err(McmcError::config("proposal count must be at least 1"));
    }
    if reference.len() != n || reference.iter().any(|&r| r <= 0.0) {
        return Err(McmcError::config("reference measure must be positive on every state"));
    }
    check_stochastic(cloud, n, "cloud kernel")?;
    check_stochastic(pivot, n, "pivot kernel")?;
    let ratio: Vec<f64> = pmf.iter().zip(reference).map(|(a, b)| a / b).collect();
    let mut k = vec![vec![0.0; n]; n];
    let mut tuple = vec![0usize; p];
    for (i, row) in k.iter_mut().enumerate() {
        for m in 0..n {
            let pm = pivot[i][m];
            if pm == 0.0 {
                continue;
            }
            tuple.iter_mut().for_each(|t| *t = 0);
            loop {
                let prob: f64 = pm * tuple.iter().map(|&j| cloud[m][j]).product::<f64>();
                if prob > 0.0 {
                    let mut w = Vec::with_capacity(p + 1);
                    w.push(ratio[i]);
                    w.extend(tuple.iter().map(|&j| ratio[j]));
                    let alpha = barker_weights(&w)?;
                    row[i] += prob * alpha[0];
                    for (s, &j) in tuple.iter().enumerate() {
                        row[j] += prob * alpha[s + 1];
                    }
                }
                // odometer increment over n^p tuples
                let mut slot = 0;
                loop {
                    if slot == p {
                        break;
                    }
                    tuple[slot] += 1;
                    if tuple[slot] < n {
                        break;
                    }
                    tuple[slot] = 0;
                    slot += 1;
                }
                if slot == p {
                    break;
                }
            }
        }
    }
    Ok(k)
}

/// Stationary check by one application: `max_j |(μK)_j − μ_j|`.
pub fn stationarity_violation(pmf: &[f64], kernel: &[Vec<f64>]) -> f64 {
    let n = pmf.len();
    (0..n)
        .map(|j| ((0..n).map(|i| pmf[i] * kernel[i][j]).sum::<f64>() - pmf[j]).abs())
        .fold(0.0, f64::max)
}

pub(crate) fn sample_categorical(row: &[f64], rng: &mut RngStream) -> usize {
    crate::involutive::select_index(row, rng.random::<f64>())
}

fn state_index(q: &[f64], n: usize) -> Result<usize> {
    let x = q[0];
    if x < 0.0 || x.fract() != 0.0 || x as usize >= n {
        return Err(McmcError::config(format!("{x} is not a state index below {n}")));
    }
    Ok(x as usize)
}

/// Single-proposal kernel on `0..n` with swap involution.
#[derive(Debug, Clone)]
pub struct DiscreteMetropolis {
    pmf: Vec<f64>,
    proposal: Vec<Vec<f64>>,
    rule: AcceptanceRule,
}

impl DiscreteMetropolis {
    pub fn new(pmf: Vec<f64>, proposal: Vec<Vec<f64>>, rule: AcceptanceRule) -> Result<Self> {
        if pmf.len() < 2 {
            return Err(McmcError::config("need at least two states"));
        }
        if pmf.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(McmcError::config("pmf entries must be finite and nonnegative"));
        }
        check_stochastic(&proposal, pmf.len(), "proposal")?;
        Ok(Self { pmf, proposal, rule })
    }

    pub fn uniform(pmf: Vec<f64>, rule: AcceptanceRule) -> Result<Self> {
        let n = pmf.len();
        Self::new(pmf, uniform_other_proposal(n), rule)
    }

    pub fn kernel_matrix(&self) -> Result<Vec<Vec<f64>>> {
        mh_kernel_matrix(&self.pmf, &self.proposal, self.rule)
    }
}

impl KernelSpec for DiscreteMetropolis {
    type Aux = usize;
    type Eval = usize;

    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, q: &[f64]) -> Result<usize> {
        state_index(q, self.pmf.len())
    }

    fn sample_auxiliary(&self, state: &ChainState<usize>, rng: &mut RngStream) -> Result<usize> {
        Ok(sample_categorical(&self.proposal[state.eval], rng))
    }

    fn involution(&self, j: usize, state: &ChainState<usize>, aux: &usize) -> Result<Image<usize, usize>> {
        debug_assert_eq!(j, 1);
        Ok(Image::mapped(vec![*aux as f64], state.eval, *aux))
    }

    fn acceptance(&self, state: &ChainState<usize>, aux: &usize, _images: &[Image<usize, usize>]) -> Result<Vec<f64>> {
        let (i, j) = (state.eval, *aux);
        let forward = self.pmf[i] * self.proposal[i][j];
        let reverse = self.pmf[j] * self.proposal[j][i];
        let a = self.rule.accept(forward, reverse)?;
        Ok(vec![1.0 - a, a])
    }

    fn flatten(&self, q: &[f64], aux: &usize) -> Vec<f64> {
        vec![q[0], *aux as f64]
    }

    fn unflatten(&self, flat: &[f64]) -> (Vec<f64>, usize) {
        (vec![flat[0]], flat[1] as usize)
    }
}

/// A row-stochastic matrix used as a transition kernel on indices.
#[derive(Debug, Clone)]
pub struct DiscreteTransition {
    matrix: Vec<Vec<f64>>,
}

impl DiscreteTransition {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix.len();
        check_stochastic(&matrix, n, "transition matrix")?;
        Ok(Self { matrix })
    }
}

impl TransitionKernel for DiscreteTransition {
    fn sample(&self, from: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        let i = state_index(from, self.matrix.len())?;
        Ok(vec![sample_categorical(&self.matrix[i], rng) as f64])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::involutive::{check_detailed_balance_discrete, master_step};
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;

    const MU: [f64; 3] = [0.2, 0.3, 0.5];

    // Hand enumeration for μ = (0.2, 0.3, 0.5), uniform proposal over the
    // other two states: K_ij = ½ min(1, μ_j/μ_i).
    fn analytic_mh_kernel() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.5, 0.5],
            vec![0.5 * 0.2 / 0.3, 1.0 - 0.5 * 0.2 / 0.3 - 0.5, 0.5],
            vec![0.5 * 0.2 / 0.5, 0.5 * 0.3 / 0.5, 1.0 - 0.5 * 0.4 - 0.5 * 0.6],
        ]
    }

    #[test]
    fn enumerated_kernel_matches_hand_values() {
        let k = mh_kernel_matrix(&MU, &uniform_other_proposal(3), AcceptanceRule::Metropolis).unwrap();
        let want = analytic_mh_kernel();
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - want[i][j]).abs() < 1e-15, "{i}{j}");
            }
        }
        assert!(check_detailed_balance_discrete(&MU, &k).unwrap() <= 1e-15);
    }

    #[test]
    fn corrupted_rule_breaks_balance() {
        let k = mh_kernel_matrix(&MU, &uniform_other_proposal(3), AcceptanceRule::Corrupted).unwrap();
        assert!(check_detailed_balance_discrete(&MU, &k).unwrap() > 0.01);
    }

    #[test]
    fn master_step_frequencies_match_kernel() {
        let kernel = DiscreteMetropolis::uniform(MU.to_vec(), AcceptanceRule::Metropolis).unwrap();
        let exact = analytic_mh_kernel();
        let n_steps = 100_000;
        for start in 0..3 {
            let mut rng = stream(11, start as u64, Purpose::Check);
            let state = kernel.initial_state(vec![start as f64]).unwrap();
            let mut counts = [0usize; 3];
            for _ in 0..n_steps {
                let rec = master_step(&kernel, &state, &mut rng).unwrap();
                counts[rec.next_state.eval] += 1;
            }
            for j in 0..3 {
                let p = exact[start][j];
                let freq = counts[j] as f64 / n_steps as f64;
                let se = (p * (1.0 - p) / n_steps as f64).sqrt();
                assert!((freq - p).abs() <= 3.0 * se + 1e-12, "{start}->{j}: {freq} vs {p}");
            }
        }
    }

    #[test]
    fn forced_acceptance_and_rejection() {
        // p = 1 with α̂_1 ≡ 1 lands on the auxiliary point, α̂_1 ≡ 0 never moves
        let mut rng = stream(3, 0, Purpose::Check);
        let always = DiscreteMetropolis::uniform(vec![0.5, 0.5], AcceptanceRule::Corrupted).unwrap();
        let s = always.initial_state(vec![0.0]).unwrap();
        for _ in 0..50 {
            assert_eq!(master_step(&always, &s, &mut rng).unwrap().next_state.eval, 1);
        }
        let never = DiscreteMetropolis::uniform(vec![1.0, 0.0], AcceptanceRule::Metropolis).unwrap();
        let s = never.initial_state(vec![0.0]).unwrap();
        for _ in 0..50 {
            assert_eq!(master_step(&never, &s, &mut rng).unwrap().next_state.eval, 0);
        }
    }

    #[test]
    fn barker_multiproposal_p1_is_reversible() {
        let n = 3;
        let flat = vec![1.0 / 3.0; n];
        let cloud: Vec<Vec<f64>> = vec![vec![1.0 / 3.0; n]; n];
        let k = multiproposal_kernel_matrix(&MU, &flat, &cloud, &cloud, 1).unwrap();
        assert!(check_detailed_balance_discrete(&MU, &k).unwrap() <= 1e-14);
        assert!(stationarity_violation(&MU, &k) <= 1e-14);
    }

    fn pmf_strategy(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.05f64..1.0, 2..=max_n).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
    }

    // Random row-stochastic matrix with strictly positive entries.
    fn stochastic(n: usize, raw: &[f64]) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let row = &raw[i * n..(i + 1) * n];
                let s: f64 = row.iter().sum();
                row.iter().map(|x| x / s).collect()
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn single_proposal_rules_are_reversible(
            pmf in pmf_strategy(6),
            raw in proptest::collection::vec(0.05f64..1.0, 36),
        ) {
            let n = pmf.len();
            let q = stochastic(n, &raw);
            for rule in [AcceptanceRule::Metropolis, AcceptanceRule::Barker] {
                let k = mh_kernel_matrix(&pmf, &q, rule).unwrap();
                prop_assert!(check_detailed_balance_discrete(&pmf, &k).unwrap() <= 1e-14);
            }
        }

        #[test]
        fn multiproposal_with_reference_reversible_kernels(
            pmf in pmf_strategy(5),
            reference in pmf_strategy(5),
            p in 1usize..=3,
        ) {
            let n = pmf.len().min(reference.len());
            let renorm = |v: &[f64]| { let s: f64 = v[..n].iter().sum(); v[..n].iter().map(|x| x / s).collect::<Vec<_>>() };
            let pmf = renorm(&pmf);
            let reference = renorm(&reference);
            // Metropolis chain for μ_0 with uniform proposals is μ_0-reversible,
            // so Q = Q̄ satisfies the balance condition against μ_0.
            let q = mh_kernel_matrix(&reference, &uniform_other_proposal(n), AcceptanceRule::Metropolis).unwrap();
            let k = multiproposal_kernel_matrix(&pmf, &reference, &q, &q, p).unwrap();
            prop_assert!(check_detailed_balance_discrete(&pmf, &k).unwrap() <= 1e-14);
        }
    }
}
