//! Passive scalar transport on the periodic unit square.
//!
//! Solves `∂θ/∂t + ∇·(vθ) = κΔθ` with a time-independent divergence-free
//! velocity `v`. The solver is pseudo-spectral: products are formed on the
//! grid, derivatives in Fourier space with 2/3 dealiasing, diffusion is
//! integrated exactly by an integrating factor and advection by RK4 (Lawson).
//!
//! Fourier coefficients are normalized so that
//! `θ(x) = Σ_k θ̂_k e^{2πi k·x}`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use invmcmc_core::rng::{standard_normal, stream, Purpose};
use invmcmc_core::samplers::{Reference, TargetModel};
use invmcmc_core::{CovarianceSpectrum, McmcError, Result};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Advective CFL factor: `dt ≤ ADVECTIVE_CFL · h / ‖v‖_∞`.
pub const ADVECTIVE_CFL: f64 = 0.25;

const TIME_TOL: f64 = 1e-12;

fn wavenumber(i: usize, m: usize) -> i64 {
    if i <= m / 2 {
        i as i64
    } else {
        i as i64 - m as i64
    }
}

fn index_of(k: i64, m: usize) -> Option<usize> {
    let half = (m / 2) as i64;
    if k.unsigned_abs() >= half as u64 {
        return None;
    }
    Some(k.rem_euclid(m as i64) as usize)
}

/// Complex Fourier coefficients of a real field on an `M × M` grid, indexed
/// `[i1 * M + i2]` in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFieldSpectral {
    m: usize,
    coeffs: Vec<Complex64>,
}

/// One term `c cos 2πk·x + s sin 2πk·x` of an initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub k: [i64; 2],
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Largest supported grid side.
pub const MAX_GRID: usize = 1024;

fn check_grid(m: usize) -> Result<()> {
    if !(4..=MAX_GRID).contains(&m) || !m.is_power_of_two() {
        return Err(McmcError::config(format!(
            "grid size must be a power of two in [4, {MAX_GRID}], got {m}"
        )));
    }
    Ok(())
}

impl ScalarFieldSpectral {
    pub fn zeros(m: usize) -> Result<Self> {
        check_grid(m)?;
        Ok(Self {
            m,
            coeffs: vec![Complex64::new(0.0, 0.0); m * m],
        })
    }

    pub fn from_modes(m: usize, modes: &[FourierMode]) -> Result<Self> {
        let mut f = Self::zeros(m)?;
        for mode in modes {
            let [k1, k2] = mode.k;
            let (Some(i1), Some(i2)) = (index_of(k1, m), index_of(k2, m)) else {
                return Err(McmcError::config(format!(
                    "mode {:?} not resolved on a {m}-point grid",
                    mode.k
                )));
            };
            if k1 == 0 && k2 == 0 {
                f.coeffs[0] += mode.cos;
                continue;
            }
            let half = Complex64::new(mode.cos / 2.0, -mode.sin / 2.0);
            let (j1, j2) = (index_of(-k1, m).unwrap(), index_of(-k2, m).unwrap());
            f.coeffs[i1 * m + i2] += half;
            f.coeffs[j1 * m + j2] += half.conj();
        }
        Ok(f)
    }

    /// Transforms grid values `[i1 * M + i2]` at `x = (i1, i2) / M`.
    pub fn from_grid(m: usize, values: &[f64]) -> Result<Self> {
        check_grid(m)?;
        if values.len() != m * m {
            return Err(McmcError::DimensionMismatch {
                expected: m * m,
                actual: values.len(),
            });
        }
        let mut fft = Fft2::new(m);
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut data);
        Ok(Self { m, coeffs: data })
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    pub fn coeff(&self, k1: i64, k2: i64) -> Complex64 {
        match (index_of(k1, self.m), index_of(k2, self.m)) {
            (Some(i1), Some(i2)) => self.coeffs[i1 * self.m + i2],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// The spatial mean `θ̂_0`.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// `max_k |θ̂_k − conj(θ̂_{−k})|`.
    pub fn hermitian_error(&self) -> f64 {
        let m = self.m;
        let mut err: f64 = 0.0;
        for i1 in 0..m {
            for i2 in 0..m {
                let j1 = (m - i1) % m;
                let j2 = (m - i2) % m;
                err = err.max((self.coeffs[i1 * m + i2] - self.coeffs[j1 * m + j2].conj()).norm());
            }
        }
        err
    }

    /// Spectral interpolation `Re Σ_k θ̂_k e^{2πi k·x}`.
    pub fn evaluate(&self, x: [f64; 2]) -> f64 {
        let m = self.m;
        let phase = |xi: f64| -> Vec<Complex64> {
            (0..m)
                .map(|i| Complex64::from_polar(1.0, 2.0 * PI * wavenumber(i, m) as f64 * xi))
                .collect()
        };
        let (p1, p2) = (phase(x[0]), phase(x[1]));
        let mut sum = Complex64::new(0.0, 0.0);
        for i1 in 0..m {
            let row = &self.coeffs[i1 * m..(i1 + 1) * m];
            let inner: Complex64 = row.iter().zip(&p2).map(|(c, p)| c * p).sum();
            sum += inner * p1[i1];
        }
        sum.re
    }

    /// Values at the grid points.
    pub fn to_grid(&self) -> Vec<f64> {
        let mut fft = Fft2::new(self.m);
        let mut data = self.coeffs.clone();
        fft.inverse(&mut data);
        data.iter().map(|c| c.re).collect()
    }
}

/// 2-D FFT with the `1/M²` factor on the forward transform.
struct Fft2 {
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    transposed: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            m,
            forward,
            inverse,
            transposed: vec![Complex64::new(0.0, 0.0); m * m],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    fn transform(&mut self, data: &mut [Complex64], forward: bool) {
        let m = self.m;
        let fft = if forward { &self.forward } else { &self.inverse };
        fft.process_with_scratch(data, &mut self.scratch);
        for i1 in 0..m {
            for i2 in 0..m {
                self.transposed[i2 * m + i1] = data[i1 * m + i2];
            }
        }
        fft.process_with_scratch(&mut self.transposed, &mut self.scratch);
        for i2 in 0..m {
            for i1 in 0..m {
                data[i1 * m + i2] = self.transposed[i2 * m + i1];
            }
        }
    }

    fn forward(&mut self, data: &mut [Complex64]) {
        self.transform(data, true);
        let scale = 1.0 / (self.m * self.m) as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }

    fn inverse(&mut self, data: &mut [Complex64]) {
        self.transform(data, false);
    }
}

/// Half-plane wavevectors `k ≠ 0` with `|k|_∞ ≤ K_v`, ordered by `|k|`.
pub fn velocity_wavevectors(kv: usize) -> Vec<[i64; 2]> {
    let kv = kv as i64;
    let mut ks: Vec<[i64; 2]> = (-kv..=kv)
        .flat_map(|k1| (-kv..=kv).map(move |k2| [k1, k2]))
        .filter(|&[k1, k2]| k1 > 0 || (k1 == 0 && k2 > 0))
        .collect();
    ks.sort_by_key(|&[k1, k2]| (k1 * k1 + k2 * k2, -k1, -k2));
    ks
}

/// `2 · |velocity_wavevectors(kv)| = 4 K_v (K_v + 1)`, or `None` on overflow.
pub fn velocity_coefficient_count(kv: usize) -> Option<usize> {
    kv.checked_add(1)?.checked_mul(kv)?.checked_mul(4)
}

/// Amplitudes `(a_k, b_k)` of `v = Σ_k k^⊥/|k| (a_k cos 2πk·x + b_k sin 2πk·x)`,
/// stored as `[a_{k0}, b_{k0}, a_{k1}, b_{k1}, …]` in [`velocity_wavevectors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityCoefficients {
    kv: usize,
    values: Vec<f64>,
}

impl VelocityCoefficients {
    pub fn new(kv: usize, values: Vec<f64>) -> Result<Self> {
        if kv == 0 {
            return Err(McmcError::config("velocity needs K_v ≥ 1"));
        }
        let expected = velocity_coefficient_count(kv).ok_or_else(|| McmcError::config("K_v too large"))?;
        if values.len() != expected {
            return Err(McmcError::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(McmcError::NonFinite("velocity coefficients"));
        }
        Ok(Self { kv, values })
    }

    pub fn zeros(kv: usize) -> Result<Self> {
        Self::new(kv, vec![0.0; 2 * velocity_wavevectors(kv).len()])
    }

    pub fn kv(&self) -> usize {
        self.kv
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Prior variances `|k|^{-4}`, one per coefficient, non-increasing.
    pub fn prior_eigenvalues(kv: usize) -> Vec<f64> {
        velocity_wavevectors(kv)
            .iter()
            .flat_map(|&[k1, k2]| {
                let l = ((k1 * k1 + k2 * k2) as f64).powi(-2);
                [l, l]
            })
            .collect()
    }

    /// The velocity at `x`.
    pub fn evaluate(&self, x: [f64; 2]) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (&[k1, k2], ab) in velocity_wavevectors(self.kv).iter().zip(self.values.chunks(2)) {
            let norm = ((k1 * k1 + k2 * k2) as f64).sqrt();
            let phase = 2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1]);
            let s = (ab[0] * phase.cos() + ab[1] * phase.sin()) / norm;
            v[0] += -(k2 as f64) * s;
            v[1] += k1 as f64 * s;
        }
        v
    }

    /// The coefficients of `x ↦ D v(Dx)` with `D = diag(1, −1)`. If `θ0` is
    /// even in `x₂` the solution for the image is `θ(t, Dx)`, so `G` is
    /// unchanged at observation points on the lines `x₂ ∈ {0, ½}`. Coefficient
    /// 0 (`a` of `k = (1, 0)`) changes sign.
    pub fn mirrored(&self) -> Self {
        let ks = velocity_wavevectors(self.kv);
        let mut values = vec![0.0; self.values.len()];
        for (&[k1, k2], ab) in ks.iter().zip(self.values.chunks(2)) {
            let image = [k1, -k2];
            let (target, b_sign) = match ks.iter().position(|&k| k == image) {
                Some(j) => (j, -1.0),
                None => (
                    ks.iter()
                        .position(|&k| k == [-k1, k2])
                        .expect("half plane is closed under negation"),
                    1.0,
                ),
            };
            let (a, b) = if b_sign < 0.0 {
                (-ab[0], -ab[1])
            } else {
                (ab[0], -ab[1])
            };
            values[2 * target] = a;
            values[2 * target + 1] = b;
        }
        Self { kv: self.kv, values }
    }

    fn on_grid(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        let mut v1 = vec![0.0; m * m];
        let mut v2 = vec![0.0; m * m];
        for i1 in 0..m {
            for i2 in 0..m {
                let [a, b] = self.evaluate([i1 as f64 / m as f64, i2 as f64 / m as f64]);
                v1[i1 * m + i2] = a;
                v2[i1 * m + i2] = b;
            }
        }
        (v1, v2)
    }
}

/// Right-hand side `−∇·(vθ)` in Fourier space, dealiased.
struct Advection {
    m: usize,
    fft: Fft2,
    v1: Vec<f64>,
    v2: Vec<f64>,
    /// `2πi k1`, `2πi k2`, zero outside the retained band.
    d1: Vec<Complex64>,
    d2: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl Advection {
    fn new(m: usize, vel: &VelocityCoefficients) -> Self {
        let (v1, v2) = vel.on_grid(m);
        let cutoff = (m / 3) as i64;
        let mut d1 = vec![Complex64::new(0.0, 0.0); m * m];
        let mut d2 = d1.clone();
        for i1 in 0..m {
            for i2 in 0..m {
                let (k1, k2) = (wavenumber(i1, m), wavenumber(i2, m));
                if k1.abs() <= cutoff && k2.abs() <= cutoff {
                    d1[i1 * m + i2] = Complex64::new(0.0, 2.0 * PI * k1 as f64);
                    d2[i1 * m + i2] = Complex64::new(0.0, 2.0 * PI * k2 as f64);
                }
            }
        }
        Self {
            m,
            fft: Fft2::new(m),
            v1,
            v2,
            d1,
            d2,
            work: vec![Complex64::new(0.0, 0.0); m * m],
        }
    }

    fn rhs(&mut self, theta: &[Complex64], out: &mut [Complex64]) {
        let m = self.m;
        self.work.copy_from_slice(theta);
        self.fft.inverse(&mut self.work);
        // pack the two real fluxes into one complex transform
        for i in 0..m * m {
            let th = self.work[i].re;
            self.work[i] = Complex64::new(self.v1[i] * th, self.v2[i] * th);
        }
        self.fft.forward(&mut self.work);
        for i1 in 0..m {
            for i2 in 0..m {
                let i = i1 * m + i2;
                let j = ((m - i1) % m) * m + (m - i2) % m;
                let z = self.work[i];
                let zc = self.work[j].conj();
                let f1 = (z + zc) * 0.5;
                let f2 = (z - zc) * Complex64::new(0.0, -0.5);
                out[i] = -(self.d1[i] * f1 + self.d2[i] * f2);
            }
        }
    }
}

/// Largest stable step on an `M` grid for the given velocity, if bounded.
pub fn advective_step_bound(m: usize, vel: &VelocityCoefficients) -> Option<f64> {
    let (v1, v2) = vel.on_grid(m);
    let vmax = v1
        .iter()
        .zip(&v2)
        .map(|(a, b)| a.abs().max(b.abs()))
        .fold(0.0, f64::max);
    (vmax > 0.0).then(|| ADVECTIVE_CFL / (m as f64 * vmax))
}

/// Fields at each time of `t_grid` (strictly increasing, ≥ 0).
pub fn solve_forward(
    theta0: &ScalarFieldSpectral,
    vel: &VelocityCoefficients,
    kappa: f64,
    t_grid: &[f64],
) -> Result<Vec<ScalarFieldSpectral>> {
    solve_forward_with(theta0, vel, kappa, t_grid, None)
}

/// [`solve_forward`] with an optional fixed maximal step, which must respect
/// the advective bound.
pub fn solve_forward_with(
    theta0: &ScalarFieldSpectral,
    vel: &VelocityCoefficients,
    kappa: f64,
    t_grid: &[f64],
    max_dt: Option<f64>,
) -> Result<Vec<ScalarFieldSpectral>> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(McmcError::config(format!("κ must be positive, got {kappa}")));
    }
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(McmcError::config(
            "time grid must be nonnegative and strictly increasing",
        ));
    }
    let m = theta0.m;
    let bound = advective_step_bound(m, vel);
    let dt_max = match (max_dt, bound) {
        (Some(dt), Some(b)) if dt > b => {
            return Err(McmcError::config(format!(
                "time step {dt} exceeds the advective bound {ADVECTIVE_CFL}·h/‖v‖∞ = {b}"
            )))
        }
        (Some(dt), _) if !(dt.is_finite() && dt > 0.0) => {
            return Err(McmcError::config(format!("time step must be positive, got {dt}")))
        }
        (Some(dt), _) => Some(dt),
        (None, b) => b,
    };

    let mut advection = Advection::new(m, vel);
    let mut u = theta0.coeffs.clone();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    let n = m * m;
    let mut k1 = vec![Complex64::new(0.0, 0.0); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut stage = k1.clone();
    for &target in t_grid {
        let span = target - t;
        if span > 0.0 {
            let steps = dt_max.map_or(1, |d| (span / d).ceil().max(1.0) as usize);
            let dt = span / steps as f64;
            let half: Vec<f64> = (0..n)
                .map(|i| {
                    let (a, b) = (wavenumber(i / m, m) as f64, wavenumber(i % m, m) as f64);
                    (-kappa * (2.0 * PI).powi(2) * (a * a + b * b) * dt / 2.0).exp()
                })
                .collect();
            for _ in 0..steps {
                advection.rhs(&u, &mut k1);
                for i in 0..n {
                    stage[i] = half[i] * (u[i] + k1[i] * (dt / 2.0));
                }
                advection.rhs(&stage, &mut k2);
                for i in 0..n {
                    stage[i] = half[i] * u[i] + k2[i] * (dt / 2.0);
                }
                advection.rhs(&stage, &mut k3);
                for i in 0..n {
                    stage[i] = half[i] * half[i] * u[i] + half[i] * k3[i] * dt;
                }
                advection.rhs(&stage, &mut k4);
                for i in 0..n {
                    let e = half[i];
                    u[i] = e * e * u[i] + (e * e * k1[i] + e * (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
                }
            }
            if u.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(McmcError::NonFinite("advection-diffusion solution"));
            }
        }
        t = target;
        out.push(ScalarFieldSpectral { m, coeffs: u.clone() });
    }
    Ok(out)
}

/// One row of the data CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub y: f64,
}

/// Noisy point values `y_j = θ(t_j, x_j) + η_j`, `η ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    rows: Vec<Observation>,
    sigma: f64,
}

impl ObservationSet {
    pub fn new(rows: Vec<Observation>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(McmcError::config(format!("noise σ must be positive, got {sigma}")));
        }
        for (i, r) in rows.iter().enumerate() {
            if !(r.t.is_finite() && r.t > 0.0) {
                return Err(McmcError::config(format!("observation {i}: time must be positive")));
            }
            if ![r.x1, r.x2].iter().all(|x| (0.0..1.0).contains(x)) {
                return Err(McmcError::config(format!(
                    "observation {i}: location must lie in [0, 1)²"
                )));
            }
            if !r.y.is_finite() {
                return Err(McmcError::config(format!("observation {i}: value is not finite")));
            }
        }
        Ok(Self { rows, sigma })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    /// Distinct observation times in increasing order.
    pub fn times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.rows.iter().map(|r| r.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
        ts
    }

    pub fn with_values(&self, y: &[f64]) -> Result<Self> {
        if y.len() != self.rows.len() {
            return Err(McmcError::DimensionMismatch {
                expected: self.rows.len(),
                actual: y.len(),
            });
        }
        let rows = self.rows.iter().zip(y).map(|(r, &y)| Observation { y, ..*r }).collect();
        Self::new(rows, self.sigma)
    }

    /// Reads `t,x1,x2,y` rows.
    pub fn read_csv<R: Read>(reader: R, sigma: f64) -> Result<Self> {
        let rows = csv::Reader::from_reader(reader)
            .deserialize()
            .collect::<std::result::Result<Vec<Observation>, _>>()
            .map_err(|e| McmcError::config(format!("observation CSV: {e}")))?;
        Self::new(rows, sigma)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for r in &self.rows {
            wtr.serialize(r)
                .map_err(|e| McmcError::config(format!("observation CSV: {e}")))?;
        }
        wtr.flush()
            .map_err(|e| McmcError::config(format!("observation CSV: {e}")))
    }
}

/// `G(v)`: the solution at each observation point. `times[i]` is the time of
/// `fields[i]`; observations off that grid are refused.
pub fn observe(times: &[f64], fields: &[ScalarFieldSpectral], obs: &ObservationSet) -> Result<Vec<f64>> {
    if times.len() != fields.len() {
        return Err(McmcError::DimensionMismatch {
            expected: times.len(),
            actual: fields.len(),
        });
    }
    obs.rows
        .iter()
        .map(|r| {
            let i = times
                .iter()
                .position(|t| (t - r.t).abs() <= TIME_TOL)
                .ok_or_else(|| McmcError::config(format!("observation time {} is not on the solution grid", r.t)))?;
            Ok(fields[i].evaluate([r.x1, r.x2]))
        })
        .collect()
}

/// Known parts of the inverse problem: initial field, diffusivity, data and
/// the velocity truncation.
#[derive(Debug, Clone)]
pub struct AdProblem {
    pub theta0: ScalarFieldSpectral,
    pub kappa: f64,
    pub obs: ObservationSet,
    pub kv: usize,
}

impl AdProblem {
    /// `G(v)`.
    pub fn forward(&self, vel: &VelocityCoefficients) -> Result<Vec<f64>> {
        let times = self.obs.times();
        let fields = solve_forward(&self.theta0, vel, self.kappa, &times)?;
        observe(&times, &fields, &self.obs)
    }

    pub fn coefficient_count(&self) -> usize {
        2 * velocity_wavevectors(self.kv).len()
    }
}

/// `Φ(v) = ‖y − G(v)‖² / (2σ²)`.
pub fn potential_phi(problem: &AdProblem, vel: &VelocityCoefficients) -> Result<f64> {
    let g = problem.forward(vel)?;
    let sigma = problem.obs.sigma();
    Ok(problem
        .obs
        .rows
        .iter()
        .zip(g)
        .map(|(r, g)| (r.y - g).powi(2))
        .sum::<f64>()
        / (2.0 * sigma * sigma))
}

/// Central differences of [`potential_phi`] in the coordinates `mode_subset`;
/// other entries are 0.
pub fn surrogate_grad_fd(
    problem: &AdProblem,
    vel: &VelocityCoefficients,
    eps: f64,
    mode_subset: &[usize],
) -> Result<Vec<f64>> {
    let k = vel.values().len();
    if !(eps.is_finite() && eps > 0.0) {
        return Err(McmcError::config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    if let Some(&bad) = mode_subset.iter().find(|&&i| i >= k) {
        return Err(McmcError::config(format!(
            "coefficient {bad} outside the {k} retained coefficients"
        )));
    }
    let mut grad = vec![0.0; k];
    for &i in mode_subset {
        let bump = |h: f64| {
            let mut v = vel.values().to_vec();
            v[i] += h;
            potential_phi(problem, &VelocityCoefficients::new(vel.kv(), v)?)
        };
        grad[i] = (bump(eps)? - bump(-eps)?) / (2.0 * eps);
    }
    Ok(grad)
}

fn default_version() -> u32 {
    1
}

/// Forward model, observation design and synthetic-data recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Grid points per side, a power of two.
    pub grid: usize,
    pub kappa: f64,
    pub theta0: Vec<FourierMode>,
    /// `K_v`: retained velocity wavevectors have `|k|_∞ ≤ K_v`.
    pub velocity_modes: usize,
    /// Observation locations in `[0, 1)²`, each observed at every time.
    pub points: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    pub sigma: f64,
    pub true_coefficients: Vec<f64>,
    pub seed: u64,
    /// Coefficients differenced by the surrogate gradient; all if absent.
    #[serde(default)]
    pub surrogate_modes: Option<Vec<usize>>,
    #[serde(default = "default_surrogate_eps")]
    pub surrogate_eps: f64,
}

/// Eight points on each of the lines `x₂ = 0` and `x₂ = ½`, which the
/// mirror `x₂ ↦ −x₂` fixes; `Φ` is then invariant under
/// [`VelocityCoefficients::mirrored`] whatever the data.
pub fn default_points() -> Vec<[f64; 2]> {
    [0.0, 0.5]
        .iter()
        .flat_map(|&x2| (0..8).map(move |i| [i as f64 / 8.0, x2]))
        .collect()
}

fn default_surrogate_eps() -> f64 {
    1e-3
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            version: 1,
            grid: 32,
            kappa: 0.01,
            theta0: vec![
                FourierMode {
                    k: [1, 0],
                    cos: 1.0,
                    sin: 0.0,
                },
                FourierMode {
                    k: [0, 1],
                    cos: 1.0,
                    sin: 0.0,
                },
            ],
            velocity_modes: 1,
            points: default_points(),
            times: vec![0.25, 0.5],
            sigma: 0.4,
            true_coefficients: vec![0.42, 0.14, -0.21, 0.07, 0.105, -0.07, 0.035, 0.07],
            seed: 2024,
            surrogate_modes: None,
            surrogate_eps: default_surrogate_eps(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| McmcError::config(format!("scenario JSON: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(McmcError::config(format!(
                "unsupported scenario version {}",
                self.version
            )));
        }
        check_grid(self.grid)?;
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(McmcError::config("κ must be positive"));
        }
        if self.points.is_empty() || self.times.is_empty() {
            return Err(McmcError::config("scenario needs observation points and times"));
        }
        if self.points.iter().flatten().any(|x| !(0.0..1.0).contains(x)) {
            return Err(McmcError::config("observation points must lie in [0, 1)²"));
        }
        if self.times.iter().any(|t| !(t.is_finite() && *t > 0.0)) || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(McmcError::config("observation times must be positive and increasing"));
        }
        if !(self.surrogate_eps.is_finite() && self.surrogate_eps > 0.0) {
            return Err(McmcError::config("surrogate_eps must be positive"));
        }
        let vel = self.truth()?;
        if let Some(modes) = &self.surrogate_modes {
            if let Some(bad) = modes.iter().find(|&&i| i >= vel.values().len()) {
                return Err(McmcError::config(format!("surrogate mode {bad} out of range")));
            }
        }
        ScalarFieldSpectral::from_modes(self.grid, &self.theta0)?;
        ObservationSet::new(Vec::new(), self.sigma)?;
        Ok(())
    }

    pub fn truth(&self) -> Result<VelocityCoefficients> {
        VelocityCoefficients::new(self.velocity_modes, self.true_coefficients.clone())
    }

    /// Synthetic data from the true coefficients with seeded noise.
    pub fn generate_data(&self) -> Result<ObservationSet> {
        self.validate()?;
        let theta0 = ScalarFieldSpectral::from_modes(self.grid, &self.theta0)?;
        let fields = solve_forward(&theta0, &self.truth()?, self.kappa, &self.times)?;
        let points = &self.points;
        let mut rng = stream(self.seed, 0, Purpose::Data);
        let mut rows = Vec::with_capacity(points.len() * self.times.len());
        for (t, field) in self.times.iter().zip(&fields) {
            for &x in points {
                let y = field.evaluate(x) + self.sigma * standard_normal(&mut rng);
                rows.push(Observation {
                    t: *t,
                    x1: x[0],
                    x2: x[1],
                    y,
                });
            }
        }
        ObservationSet::new(rows, self.sigma)
    }

    /// The posterior for the given data.
    pub fn posterior(&self, obs: ObservationSet) -> Result<AdPosterior> {
        self.validate()?;
        let problem = AdProblem {
            theta0: ScalarFieldSpectral::from_modes(self.grid, &self.theta0)?,
            kappa: self.kappa,
            obs,
            kv: self.velocity_modes,
        };
        let k = problem.coefficient_count();
        let modes = self.surrogate_modes.clone().unwrap_or_else(|| (0..k).collect());
        AdPosterior::new(problem, modes, self.surrogate_eps)
    }
}

/// Step for the reference finite-difference gradient.
pub const REFERENCE_FD_EPS: f64 = 1e-6;

/// `μ(dv) ∝ exp(−Φ(v)) N(0, C)(dv)` with `C = diag(|k|^{-4})`.
///
/// No adjoint solver is provided: [`TargetModel::gradient`] is central
/// differences over all coefficients at [`REFERENCE_FD_EPS`]; the surrogate
/// differences a chosen subset with a coarser step.
#[derive(Debug, Clone)]
pub struct AdPosterior {
    problem: AdProblem,
    spectrum: CovarianceSpectrum,
    surrogate_modes: Vec<usize>,
    surrogate_eps: f64,
}

impl AdPosterior {
    pub fn new(problem: AdProblem, surrogate_modes: Vec<usize>, surrogate_eps: f64) -> Result<Self> {
        let spectrum = CovarianceSpectrum::new(VelocityCoefficients::prior_eigenvalues(problem.kv))?;
        Ok(Self {
            problem,
            spectrum,
            surrogate_modes,
            surrogate_eps,
        })
    }

    pub fn problem(&self) -> &AdProblem {
        &self.problem
    }

    fn velocity(&self, q: &[f64]) -> Result<VelocityCoefficients> {
        VelocityCoefficients::new(self.problem.kv, q.to_vec())
    }
}

impl TargetModel for AdPosterior {
    fn dim(&self) -> usize {
        self.problem.coefficient_count()
    }

    fn log_density(&self, q: &[f64]) -> Result<f64> {
        Ok(-potential_phi(&self.problem, &self.velocity(q)?)?)
    }

    fn reference(&self) -> Reference {
        Reference::Gaussian(self.spectrum.clone())
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..q.len()).collect();
        let g = surrogate_grad_fd(&self.problem, &self.velocity(q)?, REFERENCE_FD_EPS, &all)?;
        Ok(g.into_iter().map(|x| -x).collect())
    }

    fn has_surrogate_gradient(&self) -> bool {
        true
    }

    fn surrogate_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let g = surrogate_grad_fd(
            &self.problem,
            &self.velocity(q)?,
            self.surrogate_eps,
            &self.surrogate_modes,
        )?;
        Ok(g.into_iter().map(|x| -x).collect())
    }
}
