//! Analytic targets used as references for the samplers.

use std::sync::Arc;

use crate::error::McmcError;
use crate::hilbert::CovarianceSpectrum;
use crate::Result;

use super::{check_dim, Reference, SharedTarget, TargetModel};

/// `N(mean, P⁻¹)` on `R^K` with a dense precision matrix `P`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: Vec<f64>,
    precision: Vec<Vec<f64>>,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, precision: Vec<Vec<f64>>) -> Result<Self> {
        let k = mean.len();
        if k == 0 || precision.len() != k || precision.iter().any(|r| r.len() != k) {
            return Err(McmcError::config("precision must be a square matrix matching the mean"));
        }
        for i in 0..k {
            if !(precision[i][i] > 0.0) {
                return Err(McmcError::config("precision diagonal must be positive"));
            }
            for j in 0..i {
                if precision[i][j] != precision[j][i] {
                    return Err(McmcError::config("precision must be symmetric"));
                }
            }
        }
        let chol = nalgebra::DMatrix::from_fn(k, k, |i, j| precision[i][j]).cholesky();
        if chol.is_none() {
            return Err(McmcError::config("precision must be positive definite"));
        }
        Ok(Self { mean, precision })
    }

    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        let k = mean.len();
        if variances.len() != k || variances.iter().any(|v| !(*v > 0.0)) {
            return Err(McmcError::config("variances must be positive and match the mean"));
        }
        let precision = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 / variances[i] } else { 0.0 }).collect())
            .collect();
        Self::new(mean, precision)
    }

    pub fn standard(k: usize) -> Self {
        Self::diagonal(vec![0.0; k], &vec![1.0; k]).expect("valid standard normal")
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `P⁻¹`.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let k = self.mean.len();
        let p = nalgebra::DMatrix::from_fn(k, k, |i, j| self.precision[i][j]);
        let c = p.try_inverse().expect("checked positive definite");
        (0..k).map(|i| (0..k).map(|j| c[(i, j)]).collect()).collect()
    }

    fn precision_times_residual(&self, q: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = q.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.precision
            .iter()
            .map(|row| row.iter().zip(&r).map(|(p, x)| p * x).sum())
            .collect()
    }
}

impl TargetModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, q: &[f64]) -> Result<f64> {
        check_dim(self.dim(), q)?;
        let pr = self.precision_times_residual(q);
        Ok(-0.5
            * q.iter()
                .zip(&self.mean)
                .zip(&pr)
                .map(|((a, m), p)| (a - m) * p)
                .sum::<f64>())
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), q)?;
        Ok(self.precision_times_residual(q).into_iter().map(|x| -x).collect())
    }
}

/// Equal-variance isotropic Gaussian mixture on `R^K`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    sd: f64,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, sd: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(McmcError::config("mixture needs one weight per component"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) || !(sd > 0.0) {
            return Err(McmcError::config("mixture weights and sd must be positive"));
        }
        let k = means[0].len();
        if k == 0 || means.iter().any(|m| m.len() != k) {
            return Err(McmcError::config("mixture means must share a nonzero dimension"));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            weights: weights.iter().map(|w| w / total).collect(),
            means,
            sd,
        })
    }

    /// `½ N(−a, sd²) + ½ N(a, sd²)` in one dimension.
    pub fn symmetric_1d(a: f64, sd: f64) -> Result<Self> {
        Self::new(vec![0.5, 0.5], vec![vec![-a], vec![a]], sd)
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    fn component_logs(&self, q: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| {
                let d2: f64 = q.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - 0.5 * d2 / (self.sd * self.sd)
            })
            .collect()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl TargetModel for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_density(&self, q: &[f64]) -> Result<f64> {
        check_dim(self.dim(), q)?;
        Ok(log_sum_exp(&self.component_logs(q)))
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), q)?;
        let logs = self.component_logs(q);
        let total = log_sum_exp(&logs);
        let mut g = vec![0.0; q.len()];
        for (l, m) in logs.iter().zip(&self.means) {
            let r = (l - total).exp();
            for (gi, (a, b)) in g.iter_mut().zip(q.iter().zip(m)) {
                *gi -= r * (a - b) / (self.sd * self.sd);
            }
        }
        Ok(g)
    }
}

/// A pmf on `{0, …, n−1}`, with the state stored as a one-element vector.
#[derive(Debug, Clone)]
pub struct DiscreteTarget {
    pmf: Vec<f64>,
}

impl DiscreteTarget {
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        if pmf.len() < 2 || pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(McmcError::config("pmf needs two or more nonnegative entries"));
        }
        let s: f64 = pmf.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(McmcError::config(format!("pmf sums to {s}")));
        }
        Ok(Self { pmf })
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }
}

impl TargetModel for DiscreteTarget {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, q: &[f64]) -> Result<f64> {
        check_dim(1, q)?;
        let x = q[0];
        if x < 0.0 || x.fract() != 0.0 || x as usize >= self.pmf.len() {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(self.pmf[x as usize].ln())
    }
}

/// `Φ(q) = ½ Σ_i (q_i − y_i)² / s_i²` against `N(0, C)`: a conjugate posterior.
#[derive(Debug, Clone)]
pub struct GaussianLikelihood {
    spectrum: CovarianceSpectrum,
    data: Vec<f64>,
    noise_var: Vec<f64>,
}

impl GaussianLikelihood {
    pub fn new(spectrum: CovarianceSpectrum, data: Vec<f64>, noise_var: Vec<f64>) -> Result<Self> {
        let k = spectrum.dim();
        if data.len() != k || noise_var.len() != k || noise_var.iter().any(|s| !(*s > 0.0)) {
            return Err(McmcError::config("data and noise variances must match the spectrum"));
        }
        Ok(Self {
            spectrum,
            data,
            noise_var,
        })
    }

    /// Posterior mean and variance per mode.
    pub fn posterior(&self) -> (Vec<f64>, Vec<f64>) {
        let lam = self.spectrum.eigenvalues();
        let var: Vec<f64> = lam
            .iter()
            .zip(&self.noise_var)
            .map(|(l, s)| 1.0 / (1.0 / l + 1.0 / s))
            .collect();
        let mean = var
            .iter()
            .zip(&self.data)
            .zip(&self.noise_var)
            .map(|((v, y), s)| v * y / s)
            .collect();
        (mean, var)
    }
}

impl TargetModel for GaussianLikelihood {
    fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    fn log_density(&self, q: &[f64]) -> Result<f64> {
        check_dim(self.dim(), q)?;
        Ok(-0.5
            * q.iter()
                .zip(&self.data)
                .zip(&self.noise_var)
                .map(|((a, y), s)| (a - y) * (a - y) / s)
                .sum::<f64>())
    }

    fn reference(&self) -> Reference {
        Reference::Gaussian(self.spectrum.clone())
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), q)?;
        Ok(q.iter()
            .zip(&self.data)
            .zip(&self.noise_var)
            .map(|((a, y), s)| -(a - y) / s)
            .collect())
    }
}

/// `Φ ≡ 0` against `N(0, C)`, so the target is the prior itself.
#[derive(Debug, Clone)]
pub struct PriorOnly {
    spectrum: CovarianceSpectrum,
}

impl PriorOnly {
    pub fn new(spectrum: CovarianceSpectrum) -> Self {
        Self { spectrum }
    }
}

impl TargetModel for PriorOnly {
    fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    fn log_density(&self, q: &[f64]) -> Result<f64> {
        check_dim(self.dim(), q)?;
        Ok(0.0)
    }

    fn reference(&self) -> Reference {
        Reference::Gaussian(self.spectrum.clone())
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), q)?;
        Ok(vec![0.0; q.len()])
    }
}

pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Replaces the surrogate gradient of another target.
#[derive(Clone)]
pub struct WithSurrogate {
    inner: SharedTarget,
    surrogate: GradientFn,
}

impl WithSurrogate {
    pub fn new(inner: SharedTarget, surrogate: GradientFn) -> Self {
        Self { inner, surrogate }
    }

    /// Surrogate `c · ∇ log_density`.
    pub fn scaled(inner: SharedTarget, c: f64) -> Self {
        let target = inner.clone();
        Self::new(
            inner,
            Arc::new(move |q: &[f64]| match target.gradient(q) {
                Ok(g) => g.into_iter().map(|x| c * x).collect(),
                Err(_) => vec![f64::NAN; q.len()],
            }),
        )
    }
}

impl TargetModel for WithSurrogate {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, q: &[f64]) -> Result<f64> {
        self.inner.log_density(q)
    }

    fn reference(&self) -> Reference {
        self.inner.reference()
    }

    fn has_gradient(&self) -> bool {
        self.inner.has_gradient()
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.inner.gradient(q)
    }

    fn has_surrogate_gradient(&self) -> bool {
        true
    }

    fn surrogate_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), q)?;
        Ok((self.surrogate)(q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(t: &dyn TargetModel, q: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..q.len())
            .map(|i| {
                let mut a = q.to_vec();
                let mut b = q.to_vec();
                a[i] += h;
                b[i] -= h;
                (t.log_density(&a).unwrap() - t.log_density(&b).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn assert_gradient_matches(t: &dyn TargetModel, q: &[f64]) {
        let g = t.gradient(q).unwrap();
        for (a, b) in g.iter().zip(fd_gradient(t, q)) {
            assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = GaussianTarget::new(vec![1.0, -1.0], vec![vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
        assert_gradient_matches(&g, &[0.3, 0.7]);
        let m = GaussianMixture::symmetric_1d(2.0, 0.7).unwrap();
        assert_gradient_matches(&m, &[0.4]);
        assert_gradient_matches(&m, &[-2.5]);
        let l = GaussianLikelihood::new(
            CovarianceSpectrum::power_law(3, 1.0).unwrap(),
            vec![0.1, 0.2, 0.3],
            vec![0.5, 0.5, 0.5],
        )
        .unwrap();
        assert_gradient_matches(&l, &[1.0, -0.3, 0.2]);
    }

    #[test]
    fn covariance_inverts_precision() {
        let g = GaussianTarget::new(vec![0.0, 0.0], vec![vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
        let c = g.covariance();
        let det = 2.0 - 0.36;
        assert!((c[0][0] - 1.0 / det).abs() < 1e-14);
        assert!((c[0][1] + 0.6 / det).abs() < 1e-14);
        assert!(GaussianTarget::new(vec![0.0, 0.0], vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
    }

    #[test]
    fn conjugate_posterior() {
        let l = GaussianLikelihood::new(CovarianceSpectrum::identity(1).unwrap(), vec![2.0], vec![1.0]).unwrap();
        let (m, v) = l.posterior();
        assert_eq!((m[0], v[0]), (1.0, 0.5));
    }

    #[test]
    fn discrete_target_outside_support() {
        let d = DiscreteTarget::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(d.log_density(&[3.0]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(d.log_density(&[0.5]).unwrap(), f64::NEG_INFINITY);
        assert!((d.log_density(&[2.0]).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }
}
