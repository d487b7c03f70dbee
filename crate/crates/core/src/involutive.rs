//! The generic involutive step and the acceptance-probability families.

use rand::Rng;

use crate::error::McmcError;
use crate::rng::RngStream;
use crate::Result;

/// Tolerance on `Σ α̂_j = 1` before a kernel is declared misconfigured.
pub const PROBABILITY_SUM_TOL: f64 = 1e-9;

/// A position together with whatever the kernel caches about it
/// (log density, gradient, surrogate force, …).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<E> {
    pub q: Vec<f64>,
    pub eval: E,
}

/// Result of applying one involution `S_j` to `(q, v)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Image<A, E> {
    Mapped {
        q: Vec<f64>,
        aux: A,
        eval: E,
        /// `log dS*M/dM (q, v)` when the map can only compute it along its path.
        log_rn: Option<f64>,
    },
    /// Numerical blow-up; the image receives zero acceptance weight.
    Diverged { substep: usize },
}

impl<A, E> Image<A, E> {
    pub fn mapped(q: Vec<f64>, aux: A, eval: E) -> Self {
        Image::Mapped {
            q,
            aux,
            eval,
            log_rn: None,
        }
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, Image::Diverged { .. })
    }
}

/// The `(V, S, α̂)` triple of the master algorithm.
///
/// `S_0` is the identity and is never evaluated; `involution` is called for
/// `j = 1..=proposal_count()`. `acceptance` returns all `p + 1` probabilities.
pub trait KernelSpec {
    type Aux: Clone + Send + Sync;
    type Eval: Clone + Send + Sync;

    fn dim(&self) -> usize;

    fn proposal_count(&self) -> usize {
        1
    }

    fn evaluate(&self, q: &[f64]) -> Result<Self::Eval>;

    fn sample_auxiliary(&self, state: &ChainState<Self::Eval>, rng: &mut RngStream) -> Result<Self::Aux>;

    fn involution(
        &self,
        j: usize,
        state: &ChainState<Self::Eval>,
        aux: &Self::Aux,
    ) -> Result<Image<Self::Aux, Self::Eval>>;

    fn acceptance(
        &self,
        state: &ChainState<Self::Eval>,
        aux: &Self::Aux,
        images: &[Image<Self::Aux, Self::Eval>],
    ) -> Result<Vec<f64>>;

    /// Joint coordinates of `(q, v)`, used by the involution and volume checks.
    fn flatten(&self, q: &[f64], aux: &Self::Aux) -> Vec<f64>;

    fn unflatten(&self, flat: &[f64]) -> (Vec<f64>, Self::Aux);

    /// Step size or proposal scale that burn-in adaptation may tune.
    fn tuning_parameter(&self) -> Option<f64> {
        None
    }

    fn set_tuning_parameter(&mut self, _value: f64) {}

    fn initial_state(&self, q: Vec<f64>) -> Result<ChainState<Self::Eval>> {
        if q.len() != self.dim() {
            return Err(McmcError::DimensionMismatch {
                expected: self.dim(),
                actual: q.len(),
            });
        }
        let eval = self.evaluate(&q)?;
        Ok(ChainState { q, eval })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<E> {
    pub chosen_index: usize,
    pub probabilities: Vec<f64>,
    pub next_state: ChainState<E>,
    /// Number of images that diverged.
    pub diverged: usize,
    /// Sub-step at which the first diverged image blew up.
    pub first_divergence: Option<usize>,
}

impl<E> StepRecord<E> {
    /// Index 0 is booked as a rejection for diagnostics.
    pub fn accepted(&self) -> bool {
        self.chosen_index != 0
    }
}

/// One iteration of the master algorithm.
pub fn master_step<K: KernelSpec + ?Sized>(
    kernel: &K,
    state: &ChainState<K::Eval>,
    rng: &mut RngStream,
) -> Result<StepRecord<K::Eval>> {
    if state.q.len() != kernel.dim() {
        return Err(McmcError::DimensionMismatch {
            expected: kernel.dim(),
            actual: state.q.len(),
        });
    }
    let p = kernel.proposal_count();
    let aux = kernel.sample_auxiliary(state, rng)?;
    let mut images = Vec::with_capacity(p);
    for j in 1..=p {
        match kernel.involution(j, state, &aux) {
            Ok(image) => images.push(image),
            Err(McmcError::Divergence { substep }) => images.push(Image::Diverged { substep }),
            Err(e) => return Err(e),
        }
    }
    let probabilities = kernel.acceptance(state, &aux, &images)?;
    validate_probabilities(&probabilities, p)?;

    let chosen_index = select_index(&probabilities, rng.random::<f64>());
    let diverged = images.iter().filter(|i| i.is_diverged()).count();
    let first_divergence = images.iter().find_map(|i| match i {
        Image::Diverged { substep } => Some(*substep),
        _ => None,
    });
    let next_state = if chosen_index == 0 {
        state.clone()
    } else {
        match images.swap_remove(chosen_index - 1) {
            Image::Mapped { q, eval, .. } => ChainState { q, eval },
            Image::Diverged { .. } => {
                return Err(McmcError::config(
                    "acceptance rule gave positive weight to a diverged image",
                ))
            }
        }
    };
    Ok(StepRecord {
        chosen_index,
        probabilities,
        next_state,
        diverged,
        first_divergence,
    })
}

fn validate_probabilities(probs: &[f64], p: usize) -> Result<()> {
    if probs.len() != p + 1 {
        return Err(McmcError::config(format!(
            "acceptance rule returned {} probabilities, expected {}",
            probs.len(),
            p + 1
        )));
    }
    if probs
        .iter()
        .any(|a| !(-PROBABILITY_SUM_TOL..=1.0 + PROBABILITY_SUM_TOL).contains(a))
    {
        return Err(McmcError::config(format!(
            "acceptance probability outside [0, 1]: {probs:?}"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
        return Err(McmcError::config(format!(
            "acceptance probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Single uniform against the cumulative vector, scanned in index order.
pub fn select_index(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (j, &a) in probs.iter().enumerate() {
        cumulative += a;
        if u < cumulative {
            return j;
        }
    }
    // u landed in the rounding slack above the last partial sum
    probs.iter().rposition(|&a| a > 0.0).unwrap_or(0)
}

/// `ratio ∧ 1`.
pub fn mh_probability(ratio: f64) -> Result<f64> {
    if ratio.is_nan() {
        return Err(McmcError::NanRatio);
    }
    if ratio < 0.0 {
        return Err(McmcError::config(format!("negative acceptance ratio {ratio}")));
    }
    Ok(ratio.min(1.0))
}

/// `exp(log_ratio) ∧ 1`, with `-∞` mapping to 0.
pub fn mh_probability_log(log_ratio: f64) -> Result<f64> {
    if log_ratio.is_nan() {
        return Err(McmcError::NanRatio);
    }
    Ok(if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() })
}

/// `(α̂_0, α̂_1)` for a single proposal with Metropolis acceptance.
pub fn metropolis_pair(log_ratio: f64) -> Result<Vec<f64>> {
    let a = mh_probability_log(log_ratio)?;
    Ok(vec![1.0 - a, a])
}

/// Normalizes nonnegative weights to a probability vector.
pub fn barker_weights(unnormalized: &[f64]) -> Result<Vec<f64>> {
    if unnormalized.iter().any(|w| w.is_nan()) {
        return Err(McmcError::NanRatio);
    }
    if unnormalized.iter().any(|&w| w < 0.0) {
        return Err(McmcError::config("negative Barker weight"));
    }
    let max = unnormalized.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(McmcError::DegenerateWeights);
    }
    if !max.is_finite() {
        return Err(McmcError::NonFinite("Barker weight"));
    }
    let total: f64 = unnormalized.iter().map(|w| w / max).sum();
    Ok(unnormalized.iter().map(|w| (w / max) / total).collect())
}

/// Barker weights from log weights, normalized with a max shift.
pub fn barker_weights_log(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(McmcError::NanRatio);
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(McmcError::DegenerateWeights);
    }
    if max == f64::INFINITY {
        return Err(McmcError::NonFinite("Barker log weight"));
    }
    let shifted: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    Ok(shifted.into_iter().map(|w| w / total).collect())
}

/// MHGJ acceptance `g(S(q,v)) |det ∇S(q,v)| / g(q,v) ∧ 1`.
pub fn mhgj_acceptance(g_current: f64, g_mapped: f64, abs_det_jacobian: f64) -> Result<f64> {
    if g_current == 0.0 {
        return Err(McmcError::UndefinedDensity);
    }
    mh_probability(g_mapped * abs_det_jacobian / g_current)
}

/// Log-space form of [`mhgj_acceptance`].
pub fn mhgj_log_ratio(log_g_current: f64, log_g_mapped: f64, abs_det_jacobian: f64) -> Result<f64> {
    if log_g_current == f64::NEG_INFINITY {
        return Err(McmcError::UndefinedDensity);
    }
    Ok(log_g_mapped + abs_det_jacobian.ln() - log_g_current)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvolutionReport {
    pub max_deviation: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Max over test points of `‖S(S(x)) − x‖_∞`.
pub fn check_involution<F>(map: F, points: &[Vec<f64>], tol: f64) -> Result<InvolutionReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut max_deviation: f64 = 0.0;
    for x in points {
        let once = map(x)?;
        let twice = map(&once)?;
        if twice.len() != x.len() {
            return Err(McmcError::DimensionMismatch {
                expected: x.len(),
                actual: twice.len(),
            });
        }
        let dev = x.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        max_deviation = max_deviation.max(if dev.is_nan() { f64::INFINITY } else { dev });
    }
    Ok(InvolutionReport {
        max_deviation,
        tol,
        passed: max_deviation <= tol,
    })
}

/// `S_j` of a kernel viewed as a map on flattened `(q, v)` coordinates.
pub fn kernel_involution_map<K: KernelSpec + ?Sized>(kernel: &K, j: usize) -> impl Fn(&[f64]) -> Result<Vec<f64>> + '_ {
    move |flat: &[f64]| {
        let (q, aux) = kernel.unflatten(flat);
        let state = kernel.initial_state(q)?;
        match kernel.involution(j, &state, &aux)? {
            Image::Mapped { q, aux, .. } => Ok(kernel.flatten(&q, &aux)),
            Image::Diverged { substep } => Err(McmcError::Divergence { substep }),
        }
    }
}

/// `max_{i,j} |μ_i K_ij − μ_j K_ji|`.
pub fn check_detailed_balance_discrete(pmf: &[f64], kernel: &[Vec<f64>]) -> Result<f64> {
    let n = pmf.len();
    if kernel.len() != n {
        return Err(McmcError::DimensionMismatch {
            expected: n,
            actual: kernel.len(),
        });
    }
    for row in kernel {
        if row.len() != n {
            return Err(McmcError::DimensionMismatch {
                expected: n,
                actual: row.len(),
            });
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(McmcError::config(format!("kernel row sums to {s}")));
        }
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(McmcError::config(format!("pmf sums to {total}")));
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((pmf[i] * kernel[i][j] - pmf[j] * kernel[j][i]).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mh_probability_examples() {
        assert_eq!(mh_probability(1.0).unwrap(), 1.0);
        assert_eq!(mh_probability(7.3).unwrap(), 1.0);
        // standard normal target, q = 0 → v = 1, symmetric proposal
        let ratio = (-0.5f64).exp();
        assert!((mh_probability(ratio).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert_eq!(mh_probability(f64::NAN), Err(McmcError::NanRatio));
    }

    #[test]
    fn barker_examples() {
        let w = barker_weights(&[2.5; 4]).unwrap();
        for a in &w {
            assert!((a - 0.25).abs() < 1e-15);
        }
        let w = barker_weights(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        for (a, e) in w.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - e).abs() < 1e-15);
        }
        let (pq, pv) = (0.3, 0.9);
        let w = barker_weights(&[pq, pv]).unwrap();
        assert!((w[1] - pv / (pq + pv)).abs() < 1e-15);
        assert_eq!(barker_weights(&[0.0, 0.0]), Err(McmcError::DegenerateWeights));
    }

    #[test]
    fn barker_log_handles_huge_magnitudes() {
        let w = barker_weights_log(&[-1e5, -1e5 + 2f64.ln()]).unwrap();
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mhgj_examples() {
        assert_eq!(mhgj_acceptance(1.3, 1.3, 1.0).unwrap(), 1.0);
        assert_eq!(mhgj_acceptance(2.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(mhgj_acceptance(0.0, 1.0, 1.0), Err(McmcError::UndefinedDensity));
    }

    #[test]
    fn swap_and_flip_are_exact_involutions() {
        let swap = |x: &[f64]| -> Result<Vec<f64>> {
            let k = x.len() / 2;
            Ok([&x[k..], &x[..k]].concat())
        };
        let flip = |x: &[f64]| -> Result<Vec<f64>> {
            let k = x.len() / 2;
            Ok(x[..k].iter().copied().chain(x[k..].iter().map(|v| -v)).collect())
        };
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, -0.3 * i as f64, 1.0, 2.5]).collect();
        assert_eq!(check_involution(swap, &pts, 0.0).unwrap().max_deviation, 0.0);
        assert_eq!(check_involution(flip, &pts, 0.0).unwrap().max_deviation, 0.0);
    }

    #[test]
    fn select_index_scans_in_order() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(select_index(&p, 0.0), 0);
        assert_eq!(select_index(&p, 0.19999), 0);
        assert_eq!(select_index(&p, 0.2), 1);
        assert_eq!(select_index(&p, 0.69), 1);
        assert_eq!(select_index(&p, 0.71), 2);
        assert_eq!(select_index(&[0.5, 0.5 - 1e-16, 0.0], 0.999_999_999_999_999_9), 1);
    }

    #[test]
    fn detailed_balance_identity_kernel() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(check_detailed_balance_discrete(&[0.3, 0.7], &id).unwrap(), 0.0);
        assert!(check_detailed_balance_discrete(&[0.3, 0.7, 0.0], &id).is_err());
    }

    proptest! {
        #[test]
        fn mh_scalar_reversibility(log_r in -30.0f64..30.0) {
            let r = log_r.exp();
            let lhs = mh_probability(r).unwrap();
            let rhs = r * mh_probability(1.0 / r).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs.max(1.0));
        }

        #[test]
        fn barker_is_permutation_equivariant(
            (w, perm) in proptest::collection::vec(0.01f64..100.0, 2..8).prop_flat_map(|w| {
                let n = w.len();
                (Just(w), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
            })
        ) {
            let base = barker_weights(&w).unwrap();
            let permuted: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            let out = barker_weights(&permuted).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((out[k] - base[i]).abs() <= 1e-15);
            }
            let s: f64 = base.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
