//! Bayesian multidimensional scaling.
//!
//! Observed dissimilarities are truncated normals around latent Euclidean
//! distances, `δ_{nn'} ~ N(δ*_{nn'}, σ²) I(δ_{nn'} > 0)`.

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use invmcmc_core::involutive::{master_step, KernelSpec};
use invmcmc_core::rng::{standard_normal, stream, Purpose};
use invmcmc_core::samplers::{ChainOptions, ChainRecord, DualAveraging, GradientSource, Hmc, Sampler, TargetModel};
use invmcmc_core::{McmcError, Result};
use libm::erfc;
use rand::Rng;

/// Latent distances below this are floored and the pair is flagged.
pub const DISTANCE_FLOOR: f64 = 1e-12;

/// Prior variance of each latent coordinate.
pub const DEFAULT_TAU2: f64 = 4.0;

const ASYMPTOTIC_BELOW: f64 = -8.0;

/// `log Φ(x)`, finite for all finite `x`.
pub fn log_ndtr(x: f64) -> f64 {
    if x < ASYMPTOTIC_BELOW {
        // Φ(x) = φ(x)/|x| · Σ_k (−1)^k (2k−1)!! / x^{2k}
        let x2 = x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            term *= -((2 * k - 1) as f64) / x2;
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        log_npdf(x) - (-x).ln() + sum.ln()
    } else if x > 5.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else {
        (0.5 * erfc(-x / SQRT_2)).ln()
    }
}

/// `log φ(x)`.
pub fn log_npdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (LN_2 + PI.ln())
}

/// `φ(x) / Φ(x)`.
pub fn inverse_mills(x: f64) -> f64 {
    (log_npdf(x) - log_ndtr(x)).exp()
}

/// `N × D` latent locations, row-major, and the noise variance `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentConfiguration {
    x: Vec<f64>,
    n: usize,
    d: usize,
    sigma2: f64,
}

impl LatentConfiguration {
    pub fn new(rows: &[Vec<f64>], sigma2: f64) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(McmcError::config("latent rows must share one dimension"));
        }
        Self::from_flat(rows.concat(), rows.len(), d, sigma2)
    }

    pub fn from_flat(x: Vec<f64>, n: usize, d: usize, sigma2: f64) -> Result<Self> {
        if n < 2 || d < 1 {
            return Err(McmcError::config(format!("need N ≥ 2 and D ≥ 1, got N = {n}, D = {d}")));
        }
        if x.len() != n * d {
            return Err(McmcError::DimensionMismatch {
                expected: n * d,
                actual: x.len(),
            });
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(McmcError::config(format!("σ² must be positive, got {sigma2}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(McmcError::NonFinite("latent locations"));
        }
        Ok(Self { x, n, d, sigma2 })
    }

    pub fn objects(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn flat(&self) -> &[f64] {
        &self.x
    }
}

/// Symmetric `N × N` dissimilarities with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    delta: Vec<f64>,
    n: usize,
}

impl DissimilarityMatrix {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 || rows.iter().any(|r| r.len() != n) {
            return Err(McmcError::config(
                "dissimilarities must form a square matrix with N ≥ 2",
            ));
        }
        for i in 0..n {
            if rows[i][i] != 0.0 {
                return Err(McmcError::config(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..i {
                let v = rows[i][j];
                if !(v.is_finite() && v > 0.0) {
                    return Err(McmcError::config(format!(
                        "dissimilarity ({i}, {j}) = {v} is not positive"
                    )));
                }
                if v != rows[j][i] {
                    return Err(McmcError::config(format!(
                        "dissimilarities not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            delta: rows.concat(),
            n,
        })
    }

    pub fn objects(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.delta[i * self.n + j]
    }

    /// Headerless square CSV.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| McmcError::config(format!("dissimilarity CSV: {e}")))?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| McmcError::config(format!("dissimilarity CSV: {e}")))?;
            rows.push(row);
        }
        Self::new(&rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.n {
            let row = &self.delta[i * self.n..(i + 1) * self.n];
            wtr.serialize(row)
                .map_err(|e| McmcError::config(format!("dissimilarity CSV: {e}")))?;
        }
        wtr.flush()
            .map_err(|e| McmcError::config(format!("dissimilarity CSV: {e}")))
    }
}

fn check_sizes(config: &LatentConfiguration, delta: &DissimilarityMatrix) -> Result<()> {
    if config.objects() != delta.objects() {
        return Err(McmcError::DimensionMismatch {
            expected: config.objects(),
            actual: delta.objects(),
        });
    }
    Ok(())
}

/// `(δ*, floored)` for a pair of rows.
fn latent_distance(a: &[f64], b: &[f64]) -> (f64, bool) {
    let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    if d < DISTANCE_FLOOR {
        (DISTANCE_FLOOR, true)
    } else {
        (d, false)
    }
}

/// Log-likelihood plus the number of pairs that hit [`DISTANCE_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmdsLogLik {
    pub value: f64,
    pub coincident_pairs: usize,
}

/// `−(m/2) log σ² − Σ_{n>n'} [(δ − δ*)²/(2σ²) + log Φ(δ*/σ)]`.
pub fn bmds_loglik(config: &LatentConfiguration, delta: &DissimilarityMatrix) -> Result<BmdsLogLik> {
    check_sizes(config, delta)?;
    let n = config.objects();
    let sigma2 = config.sigma2();
    let sigma = sigma2.sqrt();
    let m = (n * (n - 1) / 2) as f64;
    let mut sum = 0.0;
    let mut coincident_pairs = 0;
    for i in 1..n {
        for j in 0..i {
            let (ds, floored) = latent_distance(config.row(i), config.row(j));
            coincident_pairs += usize::from(floored);
            let r = delta.get(i, j) - ds;
            sum += r * r / (2.0 * sigma2) + log_ndtr(ds / sigma);
        }
    }
    Ok(BmdsLogLik {
        value: -0.5 * m * sigma2.ln() - sum,
        coincident_pairs,
    })
}

/// `r_{nn'} = ((δ* − δ)/σ² + φ(δ*/σ)/(σ Φ(δ*/σ))) (x_n − x_{n'})/δ*`, added to `out`
/// with sign `sign`.
fn add_coupling(
    config: &LatentConfiguration,
    delta: &DissimilarityMatrix,
    n: usize,
    m: usize,
    sign: f64,
    out: &mut [f64],
) {
    let sigma2 = config.sigma2();
    let sigma = sigma2.sqrt();
    let (xn, xm) = (config.row(n), config.row(m));
    let (ds, _) = latent_distance(xn, xm);
    let c = (ds - delta.get(n, m)) / sigma2 + inverse_mills(ds / sigma) / sigma;
    for k in 0..out.len() {
        out[k] += sign * (c * (xn[k] - xm[k]) / ds);
    }
}

fn grad_row(config: &LatentConfiguration, delta: &DissimilarityMatrix, n: usize, bands: usize) -> Result<Vec<f64>> {
    check_sizes(config, delta)?;
    if n >= config.objects() {
        return Err(McmcError::config(format!("object index {n} out of range")));
    }
    let mut g = vec![0.0; config.dim()];
    for m in 0..config.objects() {
        if m != n && m.abs_diff(n) <= bands {
            add_coupling(config, delta, n, m, -1.0, &mut g);
        }
    }
    Ok(g)
}

/// `∇_{x_n} ℓ = −Σ_{n' ≠ n} r_{nn'}`.
pub fn bmds_grad_full(config: &LatentConfiguration, delta: &DissimilarityMatrix, n: usize) -> Result<Vec<f64>> {
    grad_row(config, delta, n, config.objects() - 1)
}

/// [`bmds_grad_full`] restricted to couplings with `1 ≤ |n − n'| ≤ bands`.
pub fn bmds_grad_bands(
    config: &LatentConfiguration,
    delta: &DissimilarityMatrix,
    n: usize,
    bands: usize,
) -> Result<Vec<f64>> {
    check_bands(config.objects(), bands)?;
    grad_row(config, delta, n, bands)
}

fn check_bands(n: usize, bands: usize) -> Result<()> {
    if bands == 0 || bands >= n {
        return Err(McmcError::config(format!(
            "band count must lie in 1..={}, got {bands}",
            n - 1
        )));
    }
    Ok(())
}

/// Unordered pairs inside `bands` off-diagonals: `Σ_{b ≤ B} (N − b)`.
pub fn band_couplings(n: usize, bands: usize) -> usize {
    (1..=bands.min(n.saturating_sub(1))).map(|b| n - b).sum()
}

/// Gradient for all rows at once, flattened.
///
/// Each pair is visited once and its term is added to both rows with
/// opposite signs. Row `n` still receives its terms in increasing `n'`, so
/// the result equals the per-row functions bit for bit.
pub fn bmds_grad_all(
    config: &LatentConfiguration,
    delta: &DissimilarityMatrix,
    bands: Option<usize>,
) -> Result<Vec<f64>> {
    check_sizes(config, delta)?;
    let n = config.objects();
    let d = config.dim();
    let bands = match bands {
        Some(b) => {
            check_bands(n, b)?;
            b
        }
        None => n - 1,
    };
    let mut g = vec![0.0; n * d];
    let mut r = vec![0.0; d];
    for i in 0..n {
        for j in i.saturating_sub(bands)..i {
            r.iter_mut().for_each(|x| *x = 0.0);
            add_coupling(config, delta, i, j, 1.0, &mut r);
            for k in 0..d {
                g[i * d + k] -= r[k];
                g[j * d + k] -= -r[k];
            }
        }
    }
    Ok(g)
}

/// Latent distances `δ*_{nn'}` for `n > n'`, row by row.
pub fn pairwise_distances(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 1..n {
        for j in 0..i {
            out.push(latent_distance(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]).0);
        }
    }
    out
}

/// Draws `X ~ N(0, I)` and truncated-normal dissimilarities around its distances.
pub fn simulate(n: usize, d: usize, sigma2: f64, seed: u64) -> Result<(LatentConfiguration, DissimilarityMatrix)> {
    let mut rng = stream(seed, 0, Purpose::Data);
    let x: Vec<f64> = (0..n * d).map(|_| standard_normal(&mut rng)).collect();
    let truth = LatentConfiguration::from_flat(x, n, d, sigma2)?;
    let sigma = sigma2.sqrt();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 1..n {
        for j in 0..i {
            let (ds, _) = latent_distance(truth.row(i), truth.row(j));
            let v = loop {
                let v = ds + sigma * standard_normal(&mut rng);
                if v > 0.0 {
                    break v;
                }
            };
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    Ok((truth, DissimilarityMatrix::new(&rows)?))
}

/// Posterior over the flattened latent locations at fixed `σ²`, with
/// `x_n ~ N(0, τ² I)`. The surrogate gradient keeps `bands` off-diagonals.
#[derive(Debug, Clone)]
pub struct BmdsPosterior {
    delta: Arc<DissimilarityMatrix>,
    d: usize,
    sigma2: f64,
    tau2: f64,
    bands: usize,
}

impl BmdsPosterior {
    pub fn new(delta: Arc<DissimilarityMatrix>, d: usize, sigma2: f64, bands: usize) -> Result<Self> {
        check_bands(delta.objects(), bands)?;
        if d == 0 || !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(McmcError::config("BMDS posterior needs D ≥ 1 and σ² > 0"));
        }
        Ok(Self {
            delta,
            d,
            sigma2,
            tau2: DEFAULT_TAU2,
            bands,
        })
    }

    pub fn with_tau2(mut self, tau2: f64) -> Self {
        self.tau2 = tau2;
        self
    }

    pub fn objects(&self) -> usize {
        self.delta.objects()
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    fn config(&self, x: &[f64]) -> Result<LatentConfiguration> {
        LatentConfiguration::from_flat(x.to_vec(), self.objects(), self.d, self.sigma2)
    }

    fn with_prior(&self, x: &[f64], bands: Option<usize>) -> Result<Vec<f64>> {
        let mut g = bmds_grad_all(&self.config(x)?, &self.delta, bands)?;
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi -= xi / self.tau2;
        }
        Ok(g)
    }
}

impl TargetModel for BmdsPosterior {
    fn dim(&self) -> usize {
        self.objects() * self.d
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        let ll = bmds_loglik(&self.config(x)?, &self.delta)?.value;
        Ok(ll - 0.5 * x.iter().map(|v| v * v).sum::<f64>() / self.tau2)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.with_prior(x, None)
    }

    fn has_surrogate_gradient(&self) -> bool {
        true
    }

    fn surrogate_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let bands = (self.bands < self.objects() - 1).then_some(self.bands);
        self.with_prior(x, bands)
    }
}

/// HMC on the latent locations alternating with an adaptive random-walk
/// update of `log σ²`.
///
/// The state is the flattened locations followed by `σ²`. The precision
/// `1/σ²` has a `Gamma(1, 1)` prior. During burn-in the HMC step size follows
/// dual averaging and the `log σ²` proposal scale a Robbins–Monro recursion
/// toward acceptance 0.44; both freeze afterwards.
#[derive(Debug, Clone)]
pub struct BmdsGibbs {
    delta: Arc<DissimilarityMatrix>,
    d: usize,
    source: GradientSource,
    bands: usize,
    step_size: f64,
    n_steps: usize,
    sigma_scale: f64,
}

impl BmdsGibbs {
    pub fn new(
        delta: Arc<DissimilarityMatrix>,
        d: usize,
        source: GradientSource,
        bands: usize,
        step_size: f64,
        n_steps: usize,
    ) -> Result<Self> {
        BmdsPosterior::new(delta.clone(), d, 1.0, bands)?;
        if !(step_size.is_finite() && step_size > 0.0) || n_steps == 0 {
            return Err(McmcError::config(
                "BMDS HMC needs a positive step size and at least one step",
            ));
        }
        Ok(Self {
            delta,
            d,
            source,
            bands,
            step_size,
            n_steps,
            sigma_scale: 0.1,
        })
    }

    fn kernel(&self, sigma2: f64, step: f64) -> Result<Hmc> {
        let target = BmdsPosterior::new(self.delta.clone(), self.d, sigma2, self.bands)?;
        Hmc::new(Arc::new(target), self.source, step, self.n_steps, None)
    }

    fn log_sigma_target(&self, x: &[f64], log_sigma2: f64) -> Result<f64> {
        let config = LatentConfiguration::from_flat(x.to_vec(), self.delta.objects(), self.d, log_sigma2.exp())?;
        // Gamma(1, 1) on the precision, pushed to log σ²
        Ok(bmds_loglik(&config, &self.delta)?.value - (-log_sigma2).exp() - log_sigma2)
    }
}

impl Sampler for BmdsGibbs {
    fn dim(&self) -> usize {
        self.delta.objects() * self.d + 1
    }

    fn proposal_count(&self) -> usize {
        1
    }

    fn run(&mut self, initial: Vec<f64>, options: &ChainOptions) -> Result<ChainRecord> {
        if initial.len() != Sampler::dim(self) {
            return Err(McmcError::DimensionMismatch {
                expected: Sampler::dim(self),
                actual: initial.len(),
            });
        }
        if options.n_iter == 0 {
            return Err(McmcError::config("n_iter must be at least 1"));
        }
        let k = initial.len() - 1;
        let mut sigma2 = initial[k];
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(McmcError::config("initial σ² must be positive"));
        }
        let (burn_in, target_accept) = options.adaptation.map_or((0, 0.65), |a| (a.burn_in, a.target_accept));
        let mut rng = stream(options.seed, options.chain_index, Purpose::Chain);
        let mut step = self.step_size;
        let mut averaging = DualAveraging::new(step, target_accept);
        let mut kernel = self.kernel(sigma2, step)?;
        let mut state = kernel.initial_state(initial[..k].to_vec())?;
        let mut log_sigma = sigma2.ln();
        let mut current = self.log_sigma_target(&state.q, log_sigma)?;

        let mut record = ChainRecord {
            samples: vec![initial],
            chosen_index: Vec::with_capacity(options.n_iter),
            probabilities: Vec::with_capacity(options.n_iter),
            wall_seconds: Vec::with_capacity(options.n_iter),
            diverged: Vec::with_capacity(options.n_iter),
            final_tuning: None,
        };
        let start = Instant::now();
        for it in 1..=options.n_iter {
            let out = master_step(&kernel, &state, &mut rng).map_err(|e| annotate(e, it))?;
            if it <= burn_in {
                step = if it == burn_in {
                    averaging.final_value()
                } else {
                    averaging.update(1.0 - out.probabilities[0])
                };
                kernel.set_tuning_parameter(step);
            }
            record.chosen_index.push(out.chosen_index);
            record.probabilities.push(out.probabilities);
            record.diverged.push(out.diverged);
            state = out.next_state;
            if out.chosen_index != 0 {
                current = self.log_sigma_target(&state.q, log_sigma)?;
            }

            let proposal = log_sigma + self.sigma_scale * standard_normal(&mut rng);
            let candidate = self.log_sigma_target(&state.q, proposal)?;
            let alpha = (candidate - current).exp().min(1.0);
            if rng.random::<f64>() < alpha {
                log_sigma = proposal;
                current = candidate;
                sigma2 = log_sigma.exp();
                kernel = self.kernel(sigma2, step)?;
                state = kernel.initial_state(state.q).map_err(|e| annotate(e, it))?;
            }
            if it <= burn_in {
                self.sigma_scale *= ((alpha - 0.44) / (it as f64).sqrt()).exp();
            }

            let mut row = state.q.clone();
            row.push(sigma2);
            record.samples.push(row);
            record.wall_seconds.push(start.elapsed().as_secs_f64());
        }
        if burn_in > 0 {
            self.step_size = step;
            record.final_tuning = Some(step);
        }
        Ok(record)
    }
}

fn annotate(e: McmcError, step: usize) -> McmcError {
    match e {
        e @ McmcError::AtStep { .. } => e,
        e => McmcError::AtStep {
            step,
            source: Box::new(e),
        },
    }
}
