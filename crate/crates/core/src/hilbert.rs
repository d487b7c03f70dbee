//! Spectrally truncated Gaussian measures and the ∞HMC acceptance formula.
//!
//! The Hilbert space is represented by its first `K` coordinates in the
//! eigenbasis of the prior covariance `C`, so `C` and every power of it act
//! diagonally.

use serde::{Deserialize, Serialize};

use crate::error::McmcError;
use crate::integrators::PhasePoint;
use crate::rng::{standard_normal, RngStream};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CovarianceSpectrum {
    eigenvalues: Vec<f64>,
}

impl TryFrom<Vec<f64>> for CovarianceSpectrum {
    type Error = McmcError;

    fn try_from(eigenvalues: Vec<f64>) -> Result<Self> {
        Self::new(eigenvalues)
    }
}

impl From<CovarianceSpectrum> for Vec<f64> {
    fn from(s: CovarianceSpectrum) -> Self {
        s.eigenvalues
    }
}

impl CovarianceSpectrum {
    /// Eigenvalues must be finite, positive and non-increasing.
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(McmcError::config("covariance spectrum is empty"));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(McmcError::config("covariance eigenvalues must be finite and positive"));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(McmcError::config("covariance eigenvalues must be non-increasing"));
        }
        Ok(Self { eigenvalues })
    }

    /// `λ_i = i^{-2s}` for `i = 1..=k`.
    pub fn power_law(k: usize, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(McmcError::config(format!(
                "power-law exponent must be positive, got {s}"
            )));
        }
        Self::new((1..=k).map(|i| (i as f64).powf(-2.0 * s)).collect())
    }

    /// `C = I` on `k` modes.
    pub fn identity(k: usize) -> Result<Self> {
        Self::new(vec![1.0; k])
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `C x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.eigenvalues).map(|(a, l)| a * l).collect()
    }

    /// `C^{1/2} x`.
    pub fn apply_sqrt(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.eigenvalues).map(|(a, l)| a * l.sqrt()).collect()
    }

    /// `log` of the `N(0, C)` density up to its normalizing constant: `−½‖x‖²_C`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * whitened_dot(x, x, self)
    }

    /// Gradient of [`Self::log_density`]: `−C^{-1} x`.
    pub fn log_density_gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.eigenvalues).map(|(a, l)| -a / l).collect()
    }
}

/// One draw from `N(0, C)`.
pub fn sample_prior(spectrum: &CovarianceSpectrum, rng: &mut RngStream) -> Vec<f64> {
    spectrum
        .eigenvalues
        .iter()
        .map(|l| l.sqrt() * standard_normal(rng))
        .collect()
}

/// `⟨C^{-1/2} a, C^{-1/2} b⟩ = Σ a_i b_i / λ_i`.
pub fn whitened_dot(a: &[f64], b: &[f64], spectrum: &CovarianceSpectrum) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .zip(&spectrum.eigenvalues)
        .map(|((x, y), l)| x * y / l)
        .sum()
}

/// States of one ∞HMC trajectory before the final momentum flip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    /// `(q_l, v_l)` for `l = 0..=n`, each taken after a full palindromic step.
    pub states: Vec<PhasePoint>,
    /// `f(q_l)` for the same indices.
    pub surrogate: Vec<Vec<f64>>,
    pub delta_a: f64,
    pub delta_b: f64,
}

impl TrajectoryLog {
    pub fn n_steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.states.is_empty() || self.states.len() != self.surrogate.len() {
            return Err(McmcError::config(format!(
                "trajectory has {} states and {} surrogate values",
                self.states.len(),
                self.surrogate.len()
            )));
        }
        for (s, f) in self.states.iter().zip(&self.surrogate) {
            for len in [s.q.len(), s.v.len(), f.len()] {
                if len != k {
                    return Err(McmcError::DimensionMismatch {
                        expected: k,
                        actual: len,
                    });
                }
            }
        }
        Ok(())
    }

    /// The trajectory run backwards from the flipped end point.
    pub fn reversed(&self) -> Self {
        Self {
            states: self
                .states
                .iter()
                .rev()
                .map(|p| PhasePoint::new(p.q.clone(), p.v.iter().map(|v| -v).collect()))
                .collect(),
            surrogate: self.surrogate.iter().rev().cloned().collect(),
            delta_a: self.delta_a,
            delta_b: self.delta_b,
        }
    }
}

/// The four groups of terms in the log acceptance ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameronMartinTerms {
    /// `Φ(q_0) + Ψ(q_0, v_0) − Φ(q_n) − Ψ(q_n, −v_n)`.
    pub boundary: f64,
    /// `2δ_a Σ_{l=1}^{n−1} ⟨v_l, f(q_l)⟩_C`.
    pub interior: f64,
    /// `−(δ_a²/2)(‖f(q_0)‖²_C − ‖f(q_n)‖²_C)`.
    pub force_norms: f64,
    /// `δ_a (⟨v_0, f(q_0)⟩_C + ⟨v_n, f(q_n)⟩_C)`.
    pub endpoints: f64,
}

impl CameronMartinTerms {
    pub fn total(&self) -> f64 {
        self.boundary + self.interior + self.force_norms + self.endpoints
    }
}

fn finite(x: f64, what: &'static str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(McmcError::NonFinite(what))
    }
}

/// Evaluates the acceptance exponent given precomputed boundary values.
///
/// `boundary = Φ(q_0) + Ψ(q_0, v_0) − Φ(q_n) − Ψ(q_n, −v_n)`.
pub fn cameron_martin_terms(
    traj: &TrajectoryLog,
    boundary: f64,
    spectrum: &CovarianceSpectrum,
) -> Result<CameronMartinTerms> {
    traj.validate(spectrum.dim())?;
    let n = traj.n_steps();
    let boundary = finite(boundary, "boundary potential term")?;
    if n == 0 {
        return Ok(CameronMartinTerms {
            boundary,
            interior: 0.0,
            force_norms: 0.0,
            endpoints: 0.0,
        });
    }
    let da = traj.delta_a;
    let interior: f64 = (1..n)
        .map(|l| whitened_dot(&traj.states[l].v, &traj.surrogate[l], spectrum))
        .sum::<f64>()
        * 2.0
        * da;
    let (f0, fnn) = (&traj.surrogate[0], &traj.surrogate[n]);
    let force_norms = -0.5 * da * da * (whitened_dot(f0, f0, spectrum) - whitened_dot(fnn, fnn, spectrum));
    let endpoints =
        da * (whitened_dot(&traj.states[0].v, f0, spectrum) + whitened_dot(&traj.states[n].v, fnn, spectrum));
    Ok(CameronMartinTerms {
        boundary,
        interior: finite(interior, "interior velocity-force sum")?,
        force_norms: finite(force_norms, "whitened force norms")?,
        endpoints: finite(endpoints, "endpoint velocity-force terms")?,
    })
}

/// A momentum correction `Ψ(q, v)`.
pub type MomentumCorrection<'a> = &'a dyn Fn(&[f64], &[f64]) -> f64;

/// `log α̂` for a recorded trajectory.
///
/// `psi` is evaluated literally as `Ψ(q_0, v_0)` and `Ψ(q_n, −v_n)`; `None` means `Ψ ≡ 0`.
pub fn cameron_martin_log_alpha(
    traj: &TrajectoryLog,
    phi: &dyn Fn(&[f64]) -> f64,
    psi: Option<MomentumCorrection<'_>>,
    spectrum: &CovarianceSpectrum,
) -> Result<f64> {
    traj.validate(spectrum.dim())?;
    let first = &traj.states[0];
    let last = &traj.states[traj.n_steps()];
    let mut boundary = finite(phi(&first.q), "Φ(q_0)")? - finite(phi(&last.q), "Φ(q_n)")?;
    if let Some(psi) = psi {
        let flipped: Vec<f64> = last.v.iter().map(|v| -v).collect();
        boundary += finite(psi(&first.q, &first.v), "Ψ(q_0, v_0)")? - finite(psi(&last.q, &flipped), "Ψ(q_n, -v_n)")?;
    }
    Ok(cameron_martin_terms(traj, boundary, spectrum)?.total())
}
