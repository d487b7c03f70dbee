//! Autocorrelation, effective sample size, jumping distance and mode occupancy.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::McmcError;
use crate::samplers::ChainRecord;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Autocorrelation {
    /// `ρ̂(0..=max_lag)`.
    pub values: Vec<f64>,
    /// The series had zero variance; `values` is `1, 0, 0, …` by convention.
    pub constant: bool,
}

/// Biased (`1/n`-normalized) sample autocorrelation with the mean removed.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Autocorrelation> {
    let n = series.len();
    if n <= max_lag {
        return Err(McmcError::config(format!(
            "series of length {n} is too short for lag {max_lag}"
        )));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(McmcError::NonFinite("series"));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    if var == 0.0 || var < 1e-300 * n as f64 {
        let mut values = vec![0.0; max_lag + 1];
        values[0] = 1.0;
        return Ok(Autocorrelation { values, constant: true });
    }
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    let mut values: Vec<f64> = buf[..=max_lag].iter().map(|z| z.re / c0).collect();
    values[0] = 1.0;
    Ok(Autocorrelation {
        values,
        constant: false,
    })
}

/// Geyer's initial monotone sequence estimate of the integrated autocorrelation time.
fn integrated_time(rho: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut previous = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < rho.len() {
        let gamma = rho[2 * k] + rho[2 * k + 1];
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(previous);
        sum += gamma;
        previous = gamma;
        k += 1;
    }
    -1.0 + 2.0 * sum
}

/// `n / τ̂`, clamped to `[1, n]`.
pub fn ess(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 10 {
        return Err(McmcError::config(format!("ESS needs at least 10 values, got {n}")));
    }
    let acf = autocorrelation(series, n - 1)?;
    if acf.constant {
        return Ok(1.0);
    }
    let tau = integrated_time(&acf.values);
    let nf = n as f64;
    Ok(if tau > 0.0 { (nf / tau).clamp(1.0, nf) } else { nf })
}

/// Mean of `‖q_{k+1} − q_k‖²` over consecutive states.
pub fn msjd(states: &[Vec<f64>]) -> Result<f64> {
    if states.len() < 2 {
        return Err(McmcError::config("MSJD needs at least two states"));
    }
    let total: f64 = states
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>())
        .sum();
    Ok(total / (states.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub fractions: Vec<f64>,
    pub unassigned: f64,
    /// Some pair of balls overlaps; states in the overlap go to the nearest center.
    pub overlap: bool,
}

/// Fraction of states within `radius` of each center.
pub fn mode_occupancy(states: &[Vec<f64>], centers: &[Vec<f64>], radius: f64) -> Result<Occupancy> {
    if states.is_empty() || centers.is_empty() {
        return Err(McmcError::config("occupancy needs states and centers"));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut overlap = false;
    for i in 0..centers.len() {
        for j in 0..i {
            let d = dist(&centers[i], &centers[j]);
            if d == 0.0 {
                return Err(McmcError::config("occupancy centers must be distinct"));
            }
            if d < 2.0 * radius {
                overlap = true;
            }
        }
    }
    let mut counts = vec![0usize; centers.len()];
    let mut unassigned = 0usize;
    for s in states {
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, dist(s, c)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if d < radius {
            counts[best] += 1;
        } else {
            unassigned += 1;
        }
    }
    let n = states.len() as f64;
    Ok(Occupancy {
        fractions: counts.iter().map(|&c| c as f64 / n).collect(),
        unassigned: unassigned as f64 / n,
        overlap,
    })
}

/// Standardized differences of the mean and variance of two independent
/// chains, each standard error deflated by its own ESS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentComparison {
    pub z_mean: f64,
    pub z_variance: f64,
}

impl MomentComparison {
    pub fn within(&self, k: f64) -> bool {
        self.z_mean.abs() <= k && self.z_variance.abs() <= k
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
}

pub fn compare_moments(a: &[f64], b: &[f64]) -> Result<MomentComparison> {
    let z = |a: &[f64], b: &[f64]| -> Result<f64> {
        let ((ma, va), (mb, vb)) = (mean_var(a), mean_var(b));
        let se2 = va / ess(a)? + vb / ess(b)?;
        Ok(if se2 > 0.0 {
            (ma - mb) / se2.sqrt()
        } else if ma == mb {
            0.0
        } else {
            f64::INFINITY
        })
    };
    let (ma, mb) = (mean_var(a).0, mean_var(b).0);
    let sa: Vec<f64> = a.iter().map(|v| (v - ma).powi(2)).collect();
    let sb: Vec<f64> = b.iter().map(|v| (v - mb).powi(2)).collect();
    Ok(MomentComparison {
        z_mean: z(a, b)?,
        z_variance: z(&sa, &sb)?,
    })
}

/// Summary of one chain after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub ess: Vec<f64>,
    pub min_ess: f64,
    pub msjd: f64,
    pub acceptance_rate: f64,
    pub wall_seconds: f64,
    pub ess_per_second: Vec<f64>,
    pub msjd_per_second: f64,
}

impl DiagnosticsReport {
    pub fn from_chain(chain: &ChainRecord, burn_in: usize) -> Result<Self> {
        let states = chain.post_burn_in(burn_in);
        let ess = (0..chain.dim())
            .map(|i| ess(&chain.component(i, burn_in)))
            .collect::<Result<Vec<_>>>()?;
        let wall_seconds = chain.wall_time(burn_in);
        let msjd = msjd(states)?;
        let per_second = |x: f64| {
            if wall_seconds > 0.0 {
                x / wall_seconds
            } else {
                f64::INFINITY
            }
        };
        Ok(Self {
            min_ess: ess.iter().copied().fold(f64::INFINITY, f64::min),
            ess_per_second: ess.iter().map(|&e| per_second(e)).collect(),
            msjd_per_second: per_second(msjd),
            ess,
            msjd,
            acceptance_rate: chain.acceptance_rate(burn_in),
            wall_seconds,
        })
    }

    pub fn median_ess(&self) -> f64 {
        median(&self.ess)
    }

    pub fn min_ess_per_second(&self) -> f64 {
        self.ess_per_second.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, standard_normal_vec, stream, Purpose};

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, 0, Purpose::Check);
        let sd = (1.0 - phi * phi).sqrt();
        let mut x = standard_normal(&mut rng);
        (0..n)
            .map(|_| {
                x = phi * x + sd * standard_normal(&mut rng);
                x
            })
            .collect()
    }

    fn iid(n: usize, seed: u64) -> Vec<f64> {
        standard_normal_vec(&mut stream(seed, 0, Purpose::Check), n)
    }

    #[test]
    fn acf_of_white_noise() {
        let a = autocorrelation(&iid(100_000, 1), 5).unwrap();
        assert_eq!(a.values[0], 1.0);
        assert!(a.values[1].abs() <= 0.02);
    }

    #[test]
    fn acf_of_ar1() {
        let a = autocorrelation(&ar1(0.9, 100_000, 2), 10).unwrap();
        for k in 0..=10 {
            assert!((a.values[k] - 0.9f64.powi(k as i32)).abs() < 0.05, "lag {k}");
        }
    }

    #[test]
    fn acf_matches_direct_sum() {
        let x = iid(257, 3);
        let a = autocorrelation(&x, 20).unwrap();
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let c = |k: usize| (0..x.len() - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / n;
        for k in 0..=20 {
            assert!((a.values[k] - c(k) / c(0)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_series_is_flagged() {
        let a = autocorrelation(&[2.0; 50], 3).unwrap();
        assert!(a.constant);
        assert_eq!(a.values, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ess(&[2.0; 50]).unwrap(), 1.0);
        assert!(autocorrelation(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn moment_comparison_of_same_and_shifted_laws() {
        let (a, b) = (ar1(0.5, 20_000, 7), ar1(0.5, 20_000, 8));
        assert!(compare_moments(&a, &b).unwrap().within(4.0));
        let shifted: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        assert!(compare_moments(&a, &shifted).unwrap().z_mean < -10.0);
        let scaled: Vec<f64> = b.iter().map(|x| 2.0 * x).collect();
        assert!(compare_moments(&a, &scaled).unwrap().z_variance < -10.0);
    }

    #[test]
    fn ess_calibration() {
        let n = 100_000;
        let e = ess(&iid(n, 4)).unwrap() / n as f64;
        assert!((0.8..=1.2).contains(&e), "{e}");
        let want = 0.1 / 1.9;
        let e = ess(&ar1(0.9, n, 5)).unwrap() / n as f64;
        assert!((e / want - 1.0).abs() <= 0.3, "{e}");
        let alternating: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(ess(&alternating).unwrap() <= 1000.0);
    }

    #[test]
    fn ess_affine_invariance() {
        let x = ar1(0.5, 5000, 6);
        let y: Vec<f64> = x.iter().map(|v| 3.5 * v - 7.0).collect();
        assert!((ess(&x).unwrap() - ess(&y).unwrap()).abs() < 1e-10 * ess(&x).unwrap());
    }

    #[test]
    fn msjd_examples() {
        assert_eq!(msjd(&vec![vec![1.0, 2.0]; 5]).unwrap(), 0.0);
        let alt: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 2) as f64]).collect();
        assert_eq!(msjd(&alt).unwrap(), 1.0);
        let mut rng = stream(7, 0, Purpose::Check);
        let d = 3;
        let states: Vec<Vec<f64>> = (0..100_000).map(|_| standard_normal_vec(&mut rng, d)).collect();
        let m = msjd(&states).unwrap();
        assert!((m / (2.0 * d as f64) - 1.0).abs() < 0.05);
    }

    #[test]
    fn msjd_grows_under_thinning_for_positive_correlation() {
        let x = ar1(0.8, 20_000, 8);
        let full: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let thin: Vec<Vec<f64>> = full.iter().step_by(2).cloned().collect();
        assert!(msjd(&thin).unwrap() >= msjd(&full).unwrap());
    }

    #[test]
    fn occupancy_examples() {
        let centers = vec![vec![-1.0], vec![1.0]];
        let at_one = vec![vec![-1.0]; 10];
        let o = mode_occupancy(&at_one, &centers, 0.5).unwrap();
        assert_eq!(o.fractions, vec![1.0, 0.0]);
        let o = mode_occupancy(&at_one, &centers, 0.0).unwrap();
        assert_eq!(o.fractions, vec![0.0, 0.0]);
        assert_eq!(o.unassigned, 1.0);
        let mut rng = stream(9, 0, Purpose::Check);
        let states: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let s = if standard_normal(&mut rng) > 0.0 { 1.0 } else { -1.0 };
                vec![s + 0.2 * standard_normal(&mut rng)]
            })
            .collect();
        let o = mode_occupancy(&states, &centers, 1.0).unwrap();
        assert!((o.fractions[0] - 0.5).abs() < 0.02 && (o.fractions[1] - 0.5).abs() < 0.02);
        assert!(mode_occupancy(&states, &centers, 1.5).unwrap().overlap);
    }

    #[test]
    fn report_keys_are_stable() {
        let chain = ChainRecord {
            samples: (0..20)
                .map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()])
                .collect(),
            chosen_index: vec![1; 19],
            probabilities: vec![vec![0.0, 1.0]; 19],
            wall_seconds: (1..20).map(|i| i as f64 * 0.01).collect(),
            diverged: vec![0; 19],
            final_tuning: None,
        };
        let report = DiagnosticsReport::from_chain(&chain, 0).unwrap();
        assert_eq!(report.acceptance_rate, 1.0);
        assert!(report.ess.iter().all(|&e| (1.0..=20.0).contains(&e)));
    }
}
