//! Mixed-effects continuous-time Markov chain.
//!
//! Off-diagonal rates follow the log-linear model
//! `log Q[d, d'] = λ[d, d'] + Σ_p β_p X_p[d, d']`, and the diagonal holds the
//! negative row sums. Observations are counts of `(start, end)` transitions
//! after elapsed time `t`, so the likelihood is built from entries of `e^{tQ}`.
//!
//! Gradients use directional derivatives of the matrix exponential. The exact
//! mode evaluates the commutator series on a scaled generator and squares
//! back; the first-order mode keeps only the leading term `t e^{tQ} E`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use invmcmc_core::involutive::select_index;
use invmcmc_core::rng::{standard_normal, stream, Purpose};
use invmcmc_core::samplers::TargetModel;
use invmcmc_core::{McmcError, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest state space accepted by [`matrix_exp`].
pub const MAX_STATES: usize = 64;

/// Series order treated as exact.
pub const EXACT_ORDER: usize = 20;

const TAYLOR_DEGREE: usize = 13;

/// A CTMC generator: nonnegative off-diagonals, zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    q: DMatrix<f64>,
}

impl RateMatrix {
    /// Keeps the off-diagonal entries of `entries` and overwrites the diagonal
    /// with negative row sums.
    pub fn new(mut entries: DMatrix<f64>) -> Result<Self> {
        let d = entries.nrows();
        if d == 0 || entries.ncols() != d {
            return Err(McmcError::config("rate matrix must be square and non-empty"));
        }
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                if i == j {
                    continue;
                }
                let x = entries[(i, j)];
                if !x.is_finite() {
                    return Err(McmcError::NonFinite("rate matrix entry"));
                }
                if x < 0.0 {
                    return Err(McmcError::config(format!("negative rate {x} at ({i}, {j})")));
                }
                row += x;
            }
            entries[(i, i)] = -row;
        }
        Ok(Self { q: entries })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }
}

/// Off-diagonal positions in row-major order; the indexing of `λ`.
pub fn off_diagonal_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// `θ = (β, λ)` together with the fixed-effect design.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedEffectsParams {
    pub beta: Vec<f64>,
    /// One entry per [`off_diagonal_pairs`] position.
    pub lambda: Vec<f64>,
    /// One `D × D` matrix per entry of `beta`; diagonals are ignored.
    pub design: Vec<DMatrix<f64>>,
    states: usize,
}

impl MixedEffectsParams {
    pub fn new(states: usize, beta: Vec<f64>, lambda: Vec<f64>, design: Vec<DMatrix<f64>>) -> Result<Self> {
        if states < 2 {
            return Err(McmcError::config("a CTMC needs at least 2 states"));
        }
        if lambda.len() != states * (states - 1) {
            return Err(McmcError::DimensionMismatch {
                expected: states * (states - 1),
                actual: lambda.len(),
            });
        }
        if design.len() != beta.len() {
            return Err(McmcError::config(format!(
                "{} fixed-effect coefficients but {} design matrices",
                beta.len(),
                design.len()
            )));
        }
        if design.iter().any(|x| x.nrows() != states || x.ncols() != states) {
            return Err(McmcError::config("design matrices must be D × D"));
        }
        if beta
            .iter()
            .chain(&lambda)
            .chain(design.iter().flat_map(|x| x.iter()))
            .any(|x| !x.is_finite())
        {
            return Err(McmcError::NonFinite("mixed-effects parameters"));
        }
        Ok(Self {
            beta,
            lambda,
            design,
            states,
        })
    }

    /// Random effects only.
    pub fn random_effects(states: usize, lambda: Vec<f64>) -> Result<Self> {
        Self::new(states, Vec::new(), lambda, Vec::new())
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// `K = P + D(D − 1)`.
    pub fn parameter_count(&self) -> usize {
        self.beta.len() + self.lambda.len()
    }

    /// `θ = (β, λ)`.
    pub fn theta(&self) -> Vec<f64> {
        self.beta.iter().chain(&self.lambda).copied().collect()
    }

    /// Same design with new `θ`.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.parameter_count() {
            return Err(McmcError::DimensionMismatch {
                expected: self.parameter_count(),
                actual: theta.len(),
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(McmcError::NonFinite("mixed-effects parameters"));
        }
        let p = self.beta.len();
        Ok(Self {
            beta: theta[..p].to_vec(),
            lambda: theta[p..].to_vec(),
            design: self.design.clone(),
            states: self.states,
        })
    }

    /// `log Q[d, d']` per off-diagonal position.
    pub fn log_rates(&self) -> Vec<f64> {
        off_diagonal_pairs(self.states)
            .iter()
            .zip(&self.lambda)
            .map(|(&(i, j), l)| {
                l + self
                    .beta
                    .iter()
                    .zip(&self.design)
                    .map(|(b, x)| b * x[(i, j)])
                    .sum::<f64>()
            })
            .collect()
    }
}

pub fn build_rate_matrix(params: &MixedEffectsParams) -> Result<RateMatrix> {
    let d = params.states();
    let mut q = DMatrix::zeros(d, d);
    for (&(i, j), lr) in off_diagonal_pairs(d).iter().zip(params.log_rates()) {
        let rate = lr.exp();
        if !rate.is_finite() {
            return Err(McmcError::NonFinite("rate matrix entry (exp overflow)"));
        }
        q[(i, j)] = rate;
    }
    RateMatrix::new(q)
}

/// `e^A` by scaling and squaring around a degree-13 Taylor core.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(McmcError::config("matrix exponential needs a square matrix"));
    }
    let norm = (0..d).map(|j| a.column(j).abs().sum()).fold(0.0, f64::max);
    if !norm.is_finite() {
        return Err(McmcError::NonFinite("matrix exponential argument"));
    }
    let squarings = norm.max(1.0).log2().ceil() as i32 + 3;
    let b = a / 2f64.powi(squarings);
    let mut term = DMatrix::identity(d, d);
    let mut result = term.clone();
    for i in 1..=TAYLOR_DEGREE {
        term = &term * &b / i as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Transition matrix `e^{tQ}`, with rounding-level negatives clamped to 0.
pub fn matrix_exp(q: &RateMatrix, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    if q.dim() > MAX_STATES {
        return Err(McmcError::config(format!(
            "{} states exceed the supported maximum of {MAX_STATES}",
            q.dim()
        )));
    }
    Ok(expm(&(q.matrix() * t))?.map(|x| x.max(0.0)))
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(McmcError::config(format!(
            "time must be finite and nonnegative, got {t}"
        )))
    }
}

/// `Σ_{i ≤ order} t^{i+1}/(i+1)! · ad^i(E)` with `ad(B) = BQ − QB`.
fn commutator_series(q: &DMatrix<f64>, e: &DMatrix<f64>, t: f64, max_order: usize) -> DMatrix<f64> {
    let mut b = e.clone();
    let mut coef = t;
    let mut sum = e * t;
    for i in 1..=max_order {
        b = &b * q - q * &b;
        coef *= t / (i + 1) as f64;
        sum += &b * coef;
    }
    sum
}

/// Directional derivative of `e^{tQ}` in direction `E`, series truncated at
/// `max_order`.
pub fn directional_derivative_series(
    q: &DMatrix<f64>,
    e: &DMatrix<f64>,
    t: f64,
    max_order: usize,
) -> Result<DMatrix<f64>> {
    check_time(t)?;
    let p = expm(&(q * t))?;
    Ok(p * commutator_series(q, e, t, max_order))
}

/// `(e^{tQ}, D_E e^{tQ})` with the series applied to `tQ / 2^s` and the
/// product rule `D(P²) = D(P) P + P D(P)` through the squarings.
fn scaled_frechet(
    q: &DMatrix<f64>,
    e: &DMatrix<f64>,
    t: f64,
    max_order: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = q * t;
    let norm = (0..a.ncols()).map(|j| a.column(j).abs().sum()).fold(0.0, f64::max);
    if !norm.is_finite() {
        return Err(McmcError::NonFinite("matrix exponential argument"));
    }
    let squarings = norm.max(1.0).log2().ceil() as i32 + 3;
    let h = t / 2f64.powi(squarings);
    let mut p = expm(&(q * h))?;
    let mut dp = &p * commutator_series(q, e, h, max_order);
    for _ in 0..squarings {
        dp = &dp * &p + &p * &dp;
        p = &p * &p;
    }
    Ok((p, dp))
}

/// `t e^{tQ} E`.
pub fn first_order_directional(q: &DMatrix<f64>, e: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    directional_derivative_series(q, e, t, 0)
}

/// One row of the observation CSV: `count` transitions `start → end` over time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtmcRecord {
    pub t: f64,
    /// 1-based state.
    pub start: usize,
    /// 1-based state.
    pub end: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmcObservations {
    records: Vec<CtmcRecord>,
    initial: Vec<f64>,
}

impl CtmcObservations {
    pub fn new(records: Vec<CtmcRecord>, initial: Vec<f64>) -> Result<Self> {
        let d = initial.len();
        if d < 2 {
            return Err(McmcError::config("initial distribution needs at least 2 states"));
        }
        if initial.iter().any(|p| !p.is_finite() || *p < 0.0) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(McmcError::config("initial distribution must be a probability vector"));
        }
        for (i, r) in records.iter().enumerate() {
            check_time(r.t).map_err(|e| McmcError::config(format!("record {i}: {e}")))?;
            if r.count == 0 {
                return Err(McmcError::config(format!("record {i}: count must be at least 1")));
            }
            if !(1..=d).contains(&r.start) || !(1..=d).contains(&r.end) {
                return Err(McmcError::config(format!("record {i}: states must lie in 1..={d}")));
            }
        }
        Ok(Self { records, initial })
    }

    pub fn uniform_initial(states: usize) -> Vec<f64> {
        vec![1.0 / states as f64; states]
    }

    pub fn records(&self) -> &[CtmcRecord] {
        &self.records
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn states(&self) -> usize {
        self.initial.len()
    }

    /// Records grouped by elapsed time, in increasing time.
    fn by_time(&self) -> Vec<(f64, Vec<CtmcRecord>)> {
        let mut groups: BTreeMap<u64, (f64, Vec<CtmcRecord>)> = BTreeMap::new();
        for r in &self.records {
            groups
                .entry(r.t.to_bits())
                .or_insert_with(|| (r.t, Vec::new()))
                .1
                .push(*r);
        }
        groups.into_values().collect()
    }

    /// Reads `t,start,end,count` rows.
    pub fn read_csv<R: Read>(reader: R, initial: Vec<f64>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<CtmcRecord>, _>>()
            .map_err(|e| McmcError::config(format!("observation CSV: {e}")))?;
        Self::new(records, initial)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for r in &self.records {
            wtr.serialize(r)
                .map_err(|e| McmcError::config(format!("observation CSV: {e}")))?;
        }
        wtr.flush()
            .map_err(|e| McmcError::config(format!("observation CSV: {e}")))
    }
}

/// Log-likelihood with a flag for observed transitions of probability zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik {
    pub value: f64,
    pub zero_probability: bool,
}

fn check_states(params: &MixedEffectsParams, obs: &CtmcObservations) -> Result<()> {
    if params.states() != obs.states() {
        return Err(McmcError::DimensionMismatch {
            expected: params.states(),
            actual: obs.states(),
        });
    }
    Ok(())
}

/// `Σ count · log e^{tQ}[start, end]`.
pub fn ctmc_loglik(params: &MixedEffectsParams, obs: &CtmcObservations) -> Result<LogLik> {
    check_states(params, obs)?;
    let q = build_rate_matrix(params)?;
    let mut value = 0.0;
    let mut zero_probability = false;
    for (t, records) in obs.by_time() {
        let p = matrix_exp(&q, t)?;
        for r in records {
            let pr = p[(r.start - 1, r.end - 1)];
            if pr > 0.0 {
                value += r.count as f64 * pr.ln();
            } else {
                zero_probability = true;
            }
        }
    }
    if zero_probability {
        value = f64::NEG_INFINITY;
    }
    Ok(LogLik {
        value,
        zero_probability,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Exact { max_order: usize },
    FirstOrder,
}

impl GradientMode {
    pub fn exact() -> Self {
        GradientMode::Exact { max_order: EXACT_ORDER }
    }
}

/// Gradient of [`ctmc_loglik`] in `θ = (β, λ)`.
///
/// The exact mode runs the series on `tQ / 2^s` and carries the derivative
/// through the squarings, so truncation stays negligible for large `‖tQ‖`.
/// The first-order mode is the literal `t e^{tQ} E`.
///
/// Perturbing `λ[d, d']` moves `Q` along `Q[d, d'] (E_{dd'} − E_{dd})`, which
/// keeps the row sums at zero. Every `β_p` enters through the same log-rates,
/// so its derivative is `Σ X_p[d, d'] ∂ℓ/∂λ[d, d']`.
pub fn ctmc_loglik_grad(params: &MixedEffectsParams, obs: &CtmcObservations, mode: GradientMode) -> Result<Vec<f64>> {
    check_states(params, obs)?;
    let q = build_rate_matrix(params)?;
    let qm = q.matrix();
    let d = params.states();
    let pairs = off_diagonal_pairs(d);
    let mut grad_lambda = vec![0.0; pairs.len()];
    for (t, records) in obs.by_time() {
        let p = expm(&(qm * t))?;
        let exact = match mode {
            GradientMode::Exact { max_order } => Some(max_order),
            GradientMode::FirstOrder => None,
        };
        for r in &records {
            if p[(r.start - 1, r.end - 1)] <= 0.0 {
                return Err(McmcError::NonFinite("log of a zero transition probability"));
            }
        }
        let Some(order) = exact else {
            // `(P E)[s, f] = Q[i, j] P[s, i] (δ_{fj} − δ_{fi})`, so each pair
            // only touches the records ending in `i` or `j`.
            for (g, &(i, j)) in grad_lambda.iter_mut().zip(&pairs) {
                *g += records
                    .iter()
                    .map(|r| {
                        let (s, f) = (r.start - 1, r.end - 1);
                        let sign = (f == j) as i32 - (f == i) as i32;
                        r.count as f64 * t * qm[(i, j)] * p[(s, i)] * sign as f64 / p[(s, f)]
                    })
                    .sum::<f64>();
            }
            continue;
        };
        let contributions: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut e = DMatrix::zeros(d, d);
                e[(i, j)] = qm[(i, j)];
                e[(i, i)] = -qm[(i, j)];
                let dp = scaled_frechet(qm, &e, t, order)?.1;
                Ok(records
                    .iter()
                    .map(|r| {
                        let (s, f) = (r.start - 1, r.end - 1);
                        r.count as f64 * dp[(s, f)] / p[(s, f)]
                    })
                    .sum())
            })
            .collect::<Result<_>>()?;
        for (g, c) in grad_lambda.iter_mut().zip(contributions) {
            *g += c;
        }
    }
    let mut grad: Vec<f64> = params
        .design
        .iter()
        .map(|x| pairs.iter().zip(&grad_lambda).map(|(&(i, j), g)| x[(i, j)] * g).sum())
        .collect();
    grad.extend(grad_lambda);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(McmcError::NonFinite("CTMC gradient"));
    }
    Ok(grad)
}

/// Draws `n_draws` transitions at each time in `t_grid` with starts from the
/// initial distribution, and aggregates them into counts.
pub fn simulate_observations(
    params: &MixedEffectsParams,
    initial: Vec<f64>,
    t_grid: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<CtmcObservations> {
    if initial.len() != params.states() {
        return Err(McmcError::DimensionMismatch {
            expected: params.states(),
            actual: initial.len(),
        });
    }
    let q = build_rate_matrix(params)?;
    let mut rng = stream(seed, 0, Purpose::Data);
    let mut records = Vec::new();
    for &t in t_grid {
        let p = matrix_exp(&q, t)?;
        let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for _ in 0..n_draws {
            let start = select_index(&initial, rng.random::<f64>());
            let row: Vec<f64> = p.row(start).iter().copied().collect();
            let end = select_index(&row, rng.random::<f64>());
            *counts.entry((start, end)).or_default() += 1;
        }
        records.extend(counts.into_iter().map(|((s, e), count)| CtmcRecord {
            t,
            start: s + 1,
            end: e + 1,
            count,
        }));
    }
    CtmcObservations::new(records, initial)
}

/// Observation times of [`synthetic_posterior`].
pub const SYNTHETIC_TIMES: [f64; 3] = [0.1, 0.2, 0.4];

/// Log-rate intercept of [`synthetic_posterior`].
pub const SYNTHETIC_INTERCEPT: f64 = -1.5;

/// A mixed-effects model on `states` states: one intercept fixed effect at
/// [`SYNTHETIC_INTERCEPT`] plus `D(D−1)` random effects `λ ~ N(0, 0.5²)`,
/// observed through `n_draws` simulated transitions at each of
/// [`SYNTHETIC_TIMES`]. Returns the truth and the posterior.
pub fn synthetic_posterior(states: usize, n_draws: usize, seed: u64) -> Result<(MixedEffectsParams, CtmcPosterior)> {
    let mut rng = stream(seed, 1, Purpose::Data);
    let lambda = (0..states * states.saturating_sub(1))
        .map(|_| 0.5 * standard_normal(&mut rng))
        .collect();
    let mut intercept = DMatrix::from_element(states, states, 1.0);
    intercept.fill_diagonal(0.0);
    let truth = MixedEffectsParams::new(states, vec![SYNTHETIC_INTERCEPT], lambda, vec![intercept])?;
    let obs = simulate_observations(
        &truth,
        CtmcObservations::uniform_initial(states),
        &SYNTHETIC_TIMES,
        n_draws,
        seed,
    )?;
    let posterior = CtmcPosterior::new(truth.clone(), obs)?;
    Ok((truth, posterior))
}

/// Posterior over `θ` with independent `N(0, prior_sd²)` priors.
///
/// The exact gradient truncates the series at [`EXACT_ORDER`]; the surrogate
/// is the first-order approximation.
#[derive(Debug, Clone)]
pub struct CtmcPosterior {
    template: MixedEffectsParams,
    obs: CtmcObservations,
    prior_sd: f64,
}

impl CtmcPosterior {
    pub fn new(template: MixedEffectsParams, obs: CtmcObservations) -> Result<Self> {
        check_states(&template, &obs)?;
        Ok(Self {
            template,
            obs,
            prior_sd: 1.0,
        })
    }

    pub fn observations(&self) -> &CtmcObservations {
        &self.obs
    }

    pub fn template(&self) -> &MixedEffectsParams {
        &self.template
    }

    fn with_prior(&self, theta: &[f64], mode: GradientMode) -> Result<Vec<f64>> {
        let params = self.template.with_theta(theta)?;
        let mut g = ctmc_loglik_grad(&params, &self.obs, mode)?;
        let prec = 1.0 / (self.prior_sd * self.prior_sd);
        for (gi, x) in g.iter_mut().zip(theta) {
            *gi -= x * prec;
        }
        Ok(g)
    }
}

impl TargetModel for CtmcPosterior {
    fn dim(&self) -> usize {
        self.template.parameter_count()
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        let params = self.template.with_theta(theta)?;
        let ll = ctmc_loglik(&params, &self.obs)?.value;
        let prior = -0.5 * theta.iter().map(|x| x * x).sum::<f64>() / (self.prior_sd * self.prior_sd);
        Ok(ll + prior)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.with_prior(theta, GradientMode::exact())
    }

    fn has_surrogate_gradient(&self) -> bool {
        true
    }

    fn surrogate_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.with_prior(theta, GradientMode::FirstOrder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use invmcmc_core::rng::standard_normal_vec;

    fn symmetric_two_state() -> RateMatrix {
        RateMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap()
    }

    fn unit(d: usize, i: usize, j: usize) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(d, d);
        e[(i, j)] = 1.0;
        e
    }

    fn random_params(states: usize, seed: u64) -> MixedEffectsParams {
        let mut rng = stream(seed, 0, Purpose::Check);
        let n = states * (states - 1);
        let lambda: Vec<f64> = standard_normal_vec(&mut rng, n).iter().map(|x| 0.5 * x).collect();
        let x = DMatrix::from_fn(states, states, |i, j| ((i + 2 * j) % 3) as f64 - 1.0);
        MixedEffectsParams::new(states, vec![0.3], lambda, vec![x]).unwrap()
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    #[test]
    fn zero_parameters_give_unit_rates() {
        let p = MixedEffectsParams::random_effects(2, vec![0.0, 0.0]).unwrap();
        let q = build_rate_matrix(&p).unwrap();
        assert_eq!(q.matrix(), &DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn fixed_effect_doubles_rates() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p = MixedEffectsParams::new(2, vec![2f64.ln()], vec![0.0, 0.0], vec![x]).unwrap();
        let q = build_rate_matrix(&p).unwrap();
        assert!((q.matrix()[(0, 1)] - 2.0).abs() < 1e-15);
        assert!((q.matrix()[(0, 0)] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_zero() {
        let q = build_rate_matrix(&random_params(5, 1)).unwrap();
        for i in 0..5 {
            let off: f64 = (0..5).filter(|&j| j != i).map(|j| q.matrix()[(i, j)]).sum();
            assert_eq!(off + q.matrix()[(i, i)], 0.0);
        }
    }

    #[test]
    fn exp_overflow_is_reported() {
        let p = MixedEffectsParams::random_effects(2, vec![1000.0, 0.0]).unwrap();
        assert!(matches!(build_rate_matrix(&p), Err(McmcError::NonFinite(_))));
    }

    #[test]
    fn matrix_exp_cases() {
        let q = symmetric_two_state();
        assert_eq!(matrix_exp(&q, 0.0).unwrap(), DMatrix::identity(2, 2));
        let p = matrix_exp(&q, 1.0).unwrap();
        let a = (1.0 + (-2f64).exp()) / 2.0;
        let b = (1.0 - (-2f64).exp()) / 2.0;
        let want = DMatrix::from_row_slice(2, 2, &[a, b, b, a]);
        assert!(max_abs(&(p - want)) < 1e-10);
        assert!((a - 0.567667).abs() < 1e-6);
    }

    #[test]
    fn matrix_exp_semigroup_and_row_sums() {
        let q = build_rate_matrix(&random_params(4, 2)).unwrap();
        let lhs = matrix_exp(&q, 0.7 + 1.6).unwrap();
        let rhs = matrix_exp(&q, 0.7).unwrap() * matrix_exp(&q, 1.6).unwrap();
        assert!(max_abs(&(lhs - rhs)) < 1e-10);
        for t in [0.1, 1.0, 10.0] {
            let p = matrix_exp(&q, t).unwrap();
            for i in 0..4 {
                assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_exp_rejects_large_state_spaces() {
        let q = RateMatrix::new(DMatrix::from_element(65, 65, 0.01)).unwrap();
        assert!(matches!(matrix_exp(&q, 1.0), Err(McmcError::Config(_))));
        assert!(matrix_exp(&symmetric_two_state(), -1.0).is_err());
    }

    #[test]
    fn series_order_zero_is_first_order() {
        let q = symmetric_two_state();
        let e = unit(2, 0, 1);
        let a = directional_derivative_series(q.matrix(), &e, 0.5, 0).unwrap();
        let b = first_order_directional(q.matrix(), &e, 0.5).unwrap();
        assert_eq!(a, b);
        let p = matrix_exp(&q, 0.5).unwrap();
        assert!(max_abs(&(a - p * e * 0.5)) < 1e-15);
    }

    #[test]
    fn commuting_direction_is_exact_at_every_order() {
        let q = build_rate_matrix(&random_params(3, 3)).unwrap();
        let e = DMatrix::identity(3, 3);
        let want = expm(&(q.matrix() * 0.8)).unwrap() * 0.8;
        for order in [0, 1, 5, 20] {
            let got = directional_derivative_series(q.matrix(), &e, 0.8, order).unwrap();
            assert!(max_abs(&(got - &want)) < 1e-14);
        }
    }

    #[test]
    fn series_matches_finite_differences() {
        let q = symmetric_two_state();
        let e = unit(2, 0, 1);
        let eps = 1e-6;
        let fd = (expm(&((q.matrix() + &e * eps) * 0.5)).unwrap() - expm(&((q.matrix() - &e * eps) * 0.5)).unwrap())
            / (2.0 * eps);
        let series = directional_derivative_series(q.matrix(), &e, 0.5, 20).unwrap();
        assert!(max_abs(&(series - &fd)) < 1e-6);
    }

    #[test]
    fn scaled_derivative_matches_literal_series_for_small_norm() {
        let q = build_rate_matrix(&random_params(3, 6)).unwrap();
        let e = unit(3, 1, 2);
        let t = 0.2;
        let (_, scaled) = scaled_frechet(q.matrix(), &e, t, 20).unwrap();
        let literal = directional_derivative_series(q.matrix(), &e, t, 20).unwrap();
        assert!(max_abs(&(scaled - literal)) < 1e-12);
    }

    #[test]
    fn series_truncation_gap_between_orders_ten_and_twenty() {
        // ‖tQ‖₁ ≤ 2 leaves the order-10 remainder near t¹¹‖ad_Q‖¹⁰/11!
        let q = symmetric_two_state();
        let e = unit(2, 0, 1);
        let gap = |t: f64| {
            let a = directional_derivative_series(q.matrix(), &e, t, 10).unwrap();
            let b = directional_derivative_series(q.matrix(), &e, t, 20).unwrap();
            max_abs(&(a - b))
        };
        eprintln!("gap(‖tQ‖=2) = {:e}, gap(‖tQ‖=0.5) = {:e}", gap(1.0), gap(0.25));
        assert!(gap(0.25) <= 1e-10);
    }

    #[test]
    fn first_order_gap_is_nonzero_but_bounded() {
        let q = symmetric_two_state();
        let e = unit(2, 0, 1);
        let exact = directional_derivative_series(q.matrix(), &e, 0.5, 20).unwrap();
        let approx = first_order_directional(q.matrix(), &e, 0.5).unwrap();
        let diff = (&approx - &exact).norm() / exact.norm();
        assert!(diff > 1e-3 && diff < 1.0, "{diff}");
    }

    fn one_record(t: f64, start: usize, end: usize, count: u64) -> CtmcObservations {
        CtmcObservations::new(vec![CtmcRecord { t, start, end, count }], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn loglik_cases() {
        let p = MixedEffectsParams::random_effects(2, vec![0.0, 0.0]).unwrap();
        assert_eq!(ctmc_loglik(&p, &one_record(0.0, 1, 1, 3)).unwrap().value, 0.0);
        let ll = ctmc_loglik(&p, &one_record(1.0, 1, 2, 1)).unwrap().value;
        assert!((ll - ((1.0 - (-2f64).exp()) / 2.0).ln()).abs() < 1e-12);
        let doubled = ctmc_loglik(&p, &one_record(1.0, 1, 2, 2)).unwrap().value;
        assert!((doubled - 2.0 * ll).abs() < 1e-12);
    }

    #[test]
    fn impossible_transition_is_flagged() {
        let p = MixedEffectsParams::random_effects(2, vec![0.0, 0.0]).unwrap();
        let ll = ctmc_loglik(&p, &one_record(0.0, 1, 2, 1)).unwrap();
        assert!(ll.zero_probability && ll.value == f64::NEG_INFINITY);
    }

    #[test]
    fn observations_are_validated() {
        let bad = |r: CtmcRecord| CtmcObservations::new(vec![r], vec![0.5, 0.5]).is_err();
        assert!(bad(CtmcRecord {
            t: 1.0,
            start: 0,
            end: 1,
            count: 1
        }));
        assert!(bad(CtmcRecord {
            t: 1.0,
            start: 1,
            end: 3,
            count: 1
        }));
        assert!(bad(CtmcRecord {
            t: 1.0,
            start: 1,
            end: 2,
            count: 0
        }));
        assert!(bad(CtmcRecord {
            t: -1.0,
            start: 1,
            end: 2,
            count: 1
        }));
        assert!(CtmcObservations::new(vec![], vec![0.7, 0.7]).is_err());
    }

    fn fd_gradient(params: &MixedEffectsParams, obs: &CtmcObservations) -> Vec<f64> {
        let theta = params.theta();
        let eps = 1e-6;
        (0..theta.len())
            .map(|k| {
                let mut hi = theta.clone();
                let mut lo = theta.clone();
                hi[k] += eps;
                lo[k] -= eps;
                let f = |x: &[f64]| ctmc_loglik(&params.with_theta(x).unwrap(), obs).unwrap().value;
                (f(&hi) - f(&lo)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let params = random_params(3, 10 + seed);
            let obs =
                simulate_observations(&params, CtmcObservations::uniform_initial(3), &[0.3, 1.0], 50, seed).unwrap();
            let exact = ctmc_loglik_grad(&params, &obs, GradientMode::exact()).unwrap();
            let fd = fd_gradient(&params, &obs);
            let scale = fd.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            for (a, b) in exact.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * scale.max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn first_order_differs_from_exact_in_general() {
        let params = random_params(3, 20);
        let obs = simulate_observations(&params, CtmcObservations::uniform_initial(3), &[1.0], 100, 1).unwrap();
        let exact = ctmc_loglik_grad(&params, &obs, GradientMode::exact()).unwrap();
        let approx = ctmc_loglik_grad(&params, &obs, GradientMode::FirstOrder).unwrap();
        assert!(exact.iter().zip(&approx).any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn first_order_matches_the_literal_matrix_product() {
        let params = random_params(4, 21);
        let obs = simulate_observations(&params, CtmcObservations::uniform_initial(4), &[0.4, 1.5], 80, 2).unwrap();
        let fast = ctmc_loglik_grad(&params, &obs, GradientMode::FirstOrder).unwrap();
        let q = build_rate_matrix(&params).unwrap();
        let qm = q.matrix();
        let pairs = off_diagonal_pairs(4);
        let mut lambda = vec![0.0; pairs.len()];
        for r in obs.records() {
            let p = matrix_exp(&q, r.t).unwrap();
            let (s, f) = (r.start - 1, r.end - 1);
            for (g, &(i, j)) in lambda.iter_mut().zip(&pairs) {
                let mut e = DMatrix::zeros(4, 4);
                e[(i, j)] = qm[(i, j)];
                e[(i, i)] = -qm[(i, j)];
                let dp = first_order_directional(qm, &e, r.t).unwrap();
                *g += r.count as f64 * dp[(s, f)] / p[(s, f)];
            }
        }
        let tail = &fast[fast.len() - pairs.len()..];
        for (a, b) in tail.iter().zip(&lambda) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_changes_sign_across_the_mle() {
        // one shared log-rate: a 1-parameter family
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let obs = CtmcObservations::new(
            vec![
                CtmcRecord {
                    t: 1.0,
                    start: 1,
                    end: 1,
                    count: 30,
                },
                CtmcRecord {
                    t: 1.0,
                    start: 1,
                    end: 2,
                    count: 10,
                },
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let grad_at = |b: f64| {
            let p = MixedEffectsParams::new(2, vec![b], vec![0.0, 0.0], vec![x.clone()]).unwrap();
            ctmc_loglik_grad(&p, &obs, GradientMode::exact()).unwrap()[0]
        };
        // P(1→2) = (1 − e^{−2r})/2 = 1/4 at r = ln 2 / 2
        let mle = (2f64.ln() / 2.0).ln();
        assert!(grad_at(mle - 0.3) > 0.0 && grad_at(mle + 0.3) < 0.0);
        assert!(grad_at(mle).abs() < 1e-8);
    }

    #[test]
    fn csv_round_trip() {
        let params = random_params(3, 4);
        let obs = simulate_observations(&params, CtmcObservations::uniform_initial(3), &[0.5, 2.0], 40, 9).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,start,end,count\n"));
        let back = CtmcObservations::read_csv(&buf[..], CtmcObservations::uniform_initial(3)).unwrap();
        assert_eq!(back, obs);
        assert_eq!(obs.records().iter().map(|r| r.count).sum::<u64>(), 80);
    }

    #[test]
    fn posterior_gradients_match_finite_differences() {
        let params = random_params(3, 5);
        let obs = simulate_observations(&params, CtmcObservations::uniform_initial(3), &[1.0], 60, 2).unwrap();
        let post = CtmcPosterior::new(params.clone(), obs).unwrap();
        let theta = params.theta();
        let g = post.gradient(&theta).unwrap();
        let eps = 1e-6;
        for k in 0..theta.len() {
            let mut hi = theta.clone();
            let mut lo = theta.clone();
            hi[k] += eps;
            lo[k] -= eps;
            let fd = (post.log_density(&hi).unwrap() - post.log_density(&lo).unwrap()) / (2.0 * eps);
            assert!((g[k] - fd).abs() < 1e-5 * fd.abs().max(1.0));
        }
        assert_eq!(post.surrogate_gradient(&theta).unwrap().len(), theta.len());
    }
}
