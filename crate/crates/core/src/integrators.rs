//! Split Hamiltonian maps and the palindromic leapfrog involution.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::McmcError;
use crate::Result;

/// Coordinates beyond this magnitude abort a trajectory.
pub const DIVERGENCE_BOUND: f64 = 1e10;

pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, v: Vec<f64>) -> Self {
        assert_eq!(q.len(), v.len(), "position and momentum dimensions differ");
        Self { q, v }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        [self.q.as_slice(), self.v.as_slice()].concat()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        let k = flat.len() / 2;
        Self::new(flat[..k].to_vec(), flat[k..2 * k].to_vec())
    }

    fn is_within(&self, bound: f64) -> bool {
        self.q.iter().chain(&self.v).all(|x| x.abs() <= bound)
    }
}

/// Position update of the splitting.
#[derive(Clone)]
pub enum Flow {
    /// `q ← q + t·f(v)`; `f` must be odd.
    Drift(VectorField),
    /// Exact rotation of each `(q_i, v_i)` pair by angle `t`.
    Rotation,
}

impl fmt::Debug for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flow::Drift(_) => f.write_str("Drift(..)"),
            Flow::Rotation => f.write_str("Rotation"),
        }
    }
}

impl Flow {
    /// `f(v) = M⁻¹ v` for a diagonal mass matrix.
    pub fn diagonal_mass(mass: &[f64]) -> Self {
        let inv: Vec<f64> = mass.iter().map(|m| 1.0 / m).collect();
        Flow::Drift(Arc::new(move |v: &[f64]| {
            v.iter().zip(&inv).map(|(x, w)| x * w).collect()
        }))
    }
}

/// One palindromic step is `kick(kick_step) ∘ flow(flow_step) ∘ kick(kick_step)`.
#[derive(Clone)]
pub struct SplitDynamics {
    pub force: VectorField,
    pub flow: Flow,
    pub kick_step: f64,
    pub flow_step: f64,
    pub n_steps: usize,
}

impl fmt::Debug for SplitDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SplitDynamics")
            .field("flow", &self.flow)
            .field("kick_step", &self.kick_step)
            .field("flow_step", &self.flow_step)
            .field("n_steps", &self.n_steps)
            .finish()
    }
}

impl SplitDynamics {
    /// Velocity Verlet with time step `dt`: half kicks, full drift.
    pub fn leapfrog(force: VectorField, flow: Flow, dt: f64, n_steps: usize) -> Result<Self> {
        Self::new(force, flow, dt / 2.0, dt, n_steps)
    }

    pub fn new(force: VectorField, flow: Flow, kick_step: f64, flow_step: f64, n_steps: usize) -> Result<Self> {
        if !(kick_step.is_finite() && flow_step.is_finite()) || kick_step < 0.0 || flow_step < 0.0 {
            return Err(McmcError::config(format!(
                "step sizes must be finite and nonnegative, got ({kick_step}, {flow_step})"
            )));
        }
        Ok(Self {
            force,
            flow,
            kick_step,
            flow_step,
            n_steps,
        })
    }

    /// Checks `f(−v) = −f(v)` on the given velocities.
    pub fn check_odd_flow(&self, velocities: &[Vec<f64>], tol: f64) -> Result<()> {
        if let Flow::Drift(f) = &self.flow {
            for v in velocities {
                let neg: Vec<f64> = v.iter().map(|x| -x).collect();
                let (a, b) = (f(v), f(&neg));
                let dev = a.iter().zip(&b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
                if !(dev <= tol) {
                    return Err(McmcError::config(format!("flow is not odd: |f(v) + f(-v)| = {dev:e}")));
                }
            }
        }
        Ok(())
    }
}

fn checked(values: Vec<f64>, what: &'static str) -> Result<Vec<f64>> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(values)
    } else {
        Err(McmcError::NonFinite(what))
    }
}

fn kick_with(p: &PhasePoint, t: f64, force: &[f64]) -> PhasePoint {
    PhasePoint {
        q: p.q.clone(),
        v: p.v.iter().zip(force).map(|(v, f)| v + t * f).collect(),
    }
}

/// `(q, v + t·force(q))`.
pub fn kick(p: &PhasePoint, t: f64, force: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<PhasePoint> {
    if !t.is_finite() {
        return Err(McmcError::NonFinite("kick time"));
    }
    let f = checked(force(&p.q), "force")?;
    Ok(kick_with(p, t, &f))
}

/// `(q + t·flow(v), v)`.
pub fn drift(p: &PhasePoint, t: f64, flow: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<PhasePoint> {
    if !t.is_finite() {
        return Err(McmcError::NonFinite("drift time"));
    }
    let f = checked(flow(&p.v), "flow")?;
    Ok(PhasePoint {
        q: p.q.iter().zip(&f).map(|(q, f)| q + t * f).collect(),
        v: p.v.clone(),
    })
}

/// `(q cos t + v sin t, v cos t − q sin t)`, coordinatewise.
pub fn rotate(p: &PhasePoint, t: f64) -> PhasePoint {
    let (s, c) = t.sin_cos();
    PhasePoint {
        q: p.q.iter().zip(&p.v).map(|(q, v)| q * c + v * s).collect(),
        v: p.q.iter().zip(&p.v).map(|(q, v)| v * c - q * s).collect(),
    }
}

/// `R(q, v) = (q, −v)`.
pub fn momentum_flip(p: &PhasePoint) -> PhasePoint {
    PhasePoint {
        q: p.q.clone(),
        v: p.v.iter().map(|v| -v).collect(),
    }
}

fn apply_flow(p: &PhasePoint, t: f64, flow: &Flow) -> Result<PhasePoint> {
    match flow {
        Flow::Drift(f) => drift(p, t, f.as_ref()),
        Flow::Rotation => Ok(rotate(p, t)),
    }
}

/// Output of [`integrate`]: the end point before the momentum flip.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub end: PhasePoint,
    /// `force(end.q)`, reusable by the next trajectory.
    pub end_force: Vec<f64>,
    /// States after each full step, starting with the initial point, when recorded.
    pub states: Vec<PhasePoint>,
    /// `force(q_l)` for each recorded state.
    pub forces: Vec<Vec<f64>>,
}

/// Runs `n_steps` palindromic sub-steps.
///
/// `initial_force` may carry a cached `force(start.q)`. Blow-up past
/// [`DIVERGENCE_BOUND`] or a non-finite force aborts with the sub-step index.
pub fn integrate(
    start: &PhasePoint,
    dynamics: &SplitDynamics,
    initial_force: Option<Vec<f64>>,
    record: bool,
) -> Result<Trajectory> {
    let mut force = match initial_force {
        Some(f) => f,
        None => (dynamics.force)(&start.q),
    };
    if force.iter().any(|x| !x.is_finite()) {
        return Err(McmcError::Divergence { substep: 0 });
    }
    let mut point = start.clone();
    let mut states = Vec::new();
    let mut forces = Vec::new();
    if record {
        states.push(point.clone());
        forces.push(force.clone());
    }
    for step in 1..=dynamics.n_steps {
        let half = kick_with(&point, dynamics.kick_step, &force);
        let moved = apply_flow(&half, dynamics.flow_step, &dynamics.flow)
            .map_err(|_| McmcError::Divergence { substep: step })?;
        force = (dynamics.force)(&moved.q);
        if force.iter().any(|x| !x.is_finite()) {
            return Err(McmcError::Divergence { substep: step });
        }
        point = kick_with(&moved, dynamics.kick_step, &force);
        if !point.is_within(DIVERGENCE_BOUND) {
            return Err(McmcError::Divergence { substep: step });
        }
        if record {
            states.push(point.clone());
            forces.push(force.clone());
        }
    }
    Ok(Trajectory {
        end: point,
        end_force: force,
        states,
        forces,
    })
}

/// `R ∘ (palindromic step)^n`.
pub fn leapfrog_involution(p: &PhasePoint, dynamics: &SplitDynamics) -> Result<PhasePoint> {
    let traj = integrate(p, dynamics, None, false)?;
    Ok(momentum_flip(&traj.end))
}

/// `|det ∇S(x)|` from a central-difference Jacobian.
///
/// `eps` defaults to `1e-5 · (1 + ‖x‖_∞)`.
pub fn jacobian_abs_det_fd<F>(map: F, point: &[f64], eps: Option<f64>) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = point.len();
    if n == 0 || n > 20 {
        return Err(McmcError::config(format!(
            "finite-difference Jacobian supports 1..=20 joint coordinates, got {n}"
        )));
    }
    let norm = point.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let h = eps.unwrap_or(1e-5 * (1.0 + norm));
    let mut jac = DMatrix::<f64>::zeros(n, n);
    let mut x = point.to_vec();
    for col in 0..n {
        x[col] = point[col] + h;
        let plus = map(&x)?;
        x[col] = point[col] - h;
        let minus = map(&x)?;
        x[col] = point[col];
        if plus.len() != n || minus.len() != n {
            return Err(McmcError::DimensionMismatch {
                expected: n,
                actual: plus.len(),
            });
        }
        for row in 0..n {
            jac[(row, col)] = (plus[row] - minus[row]) / (2.0 * h);
        }
    }
    let det = jac.determinant();
    if !det.is_finite() {
        return Err(McmcError::NonFinite("Jacobian determinant"));
    }
    if det.abs() < f64::EPSILON {
        return Err(McmcError::SingularJacobian { det });
    }
    Ok(det.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vec, stream, Purpose};

    fn harmonic() -> VectorField {
        Arc::new(|q: &[f64]| q.iter().map(|x| -x).collect())
    }

    fn energy(p: &PhasePoint) -> f64 {
        0.5 * p.q.iter().chain(&p.v).map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn kick_examples() {
        let f = harmonic();
        let p = PhasePoint::new(vec![1.0], vec![0.0]);
        assert_eq!(kick(&p, 0.0, f.as_ref()).unwrap(), p);
        let k = kick(&p, 0.05, f.as_ref()).unwrap();
        assert_eq!(k.q, vec![1.0]);
        assert!((k.v[0] + 0.05).abs() < 1e-16);
        let back = kick(&k, -0.05, f.as_ref()).unwrap();
        assert!((back.v[0] - p.v[0]).abs() <= 1e-14);
        let bad: &dyn Fn(&[f64]) -> Vec<f64> = &|_| vec![f64::NAN];
        assert_eq!(kick(&p, 0.1, bad), Err(McmcError::NonFinite("force")));
    }

    #[test]
    fn drift_examples() {
        let id: &dyn Fn(&[f64]) -> Vec<f64> = &|v| v.to_vec();
        let p = PhasePoint::new(vec![1.0], vec![-0.05]);
        assert_eq!(drift(&p, 0.0, id).unwrap(), p);
        let d = drift(&p, 0.1, id).unwrap();
        assert!((d.q[0] - 0.995).abs() < 1e-15);
        assert_eq!(d.v, vec![-0.05]);
        let back = drift(&d, -0.1, id).unwrap();
        assert!((back.q[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rotate_examples() {
        let p = PhasePoint::new(vec![1.0, 0.3], vec![0.0, -2.0]);
        assert_eq!(rotate(&p, 0.0), p);
        let r = rotate(&PhasePoint::new(vec![1.0], vec![0.0]), std::f64::consts::FRAC_PI_2);
        assert!(r.q[0].abs() < 1e-15 && (r.v[0] + 1.0).abs() < 1e-15);
        let mut rng = stream(5, 0, Purpose::Check);
        for i in 0..200 {
            let p = PhasePoint::new(standard_normal_vec(&mut rng, 4), standard_normal_vec(&mut rng, 4));
            let t = -10.0 + 0.1 * i as f64;
            let r = rotate(&p, t);
            assert!((energy(&r) - energy(&p)).abs() <= 1e-13);
        }
    }

    #[test]
    fn flip_examples() {
        let p = PhasePoint::new(vec![1.0], vec![2.0]);
        assert_eq!(momentum_flip(&p), PhasePoint::new(vec![1.0], vec![-2.0]));
        assert_eq!(momentum_flip(&momentum_flip(&p)), p);
        let mut rng = stream(6, 0, Purpose::Check);
        for _ in 0..100 {
            let p = PhasePoint::new(standard_normal_vec(&mut rng, 3), standard_normal_vec(&mut rng, 3));
            let t = 2.0 * crate::rng::standard_normal(&mut rng);
            let lhs = momentum_flip(&rotate(&momentum_flip(&p), t));
            let rhs = rotate(&p, -t);
            for (a, b) in lhs.to_flat().iter().zip(rhs.to_flat()) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn hand_leapfrog_step() {
        let dynamics = SplitDynamics::leapfrog(harmonic(), Flow::diagonal_mass(&[1.0]), 0.1, 1).unwrap();
        let start = PhasePoint::new(vec![1.0], vec![0.0]);
        let out = leapfrog_involution(&start, &dynamics).unwrap();
        assert!((out.q[0] - 0.995).abs() < 1e-15);
        assert!((out.v[0] - 0.09975).abs() < 1e-15);
        // H(1, 0) = 0.5; H(0.995, ∓0.09975) = 0.4999875…
        let h_end = 0.5 * 0.995f64.powi(2) + 0.5 * 0.09975f64.powi(2);
        assert!((h_end - 0.499_987_531_25).abs() < 1e-15);
        assert!(0.5 - h_end > 0.0);
        let back = leapfrog_involution(&out, &dynamics).unwrap();
        assert!((back.q[0] - 1.0).abs() <= 1e-12 && back.v[0].abs() <= 1e-12);
    }

    #[test]
    fn divergence_is_reported_with_substep() {
        let explode: VectorField = Arc::new(|q: &[f64]| q.iter().map(|x| 1e6 * x * x.abs()).collect());
        let dynamics = SplitDynamics::leapfrog(explode, Flow::diagonal_mass(&[1.0]), 0.5, 50).unwrap();
        let err = leapfrog_involution(&PhasePoint::new(vec![1.0], vec![0.0]), &dynamics).unwrap_err();
        assert!(matches!(err, McmcError::Divergence { substep } if substep >= 1));
    }

    #[test]
    fn jacobian_examples() {
        let id = |x: &[f64]| -> Result<Vec<f64>> { Ok(x.to_vec()) };
        assert!((jacobian_abs_det_fd(id, &[0.3, -1.2], None).unwrap() - 1.0).abs() < 1e-9);
        let scaled_swap = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![2.0 * x[1], x[0] / 2.0]) };
        assert!((jacobian_abs_det_fd(scaled_swap, &[0.7, 0.1], None).unwrap() - 1.0).abs() < 1e-9);
        let collapse = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[0], x[0]]) };
        assert!(matches!(
            jacobian_abs_det_fd(collapse, &[1.0, 2.0], None),
            Err(McmcError::SingularJacobian { .. })
        ));
    }

    #[test]
    fn leapfrog_volume_in_dim_two() {
        // anharmonic potential Φ(q) = q⁴/4 + cos q
        let force: VectorField = Arc::new(|q: &[f64]| q.iter().map(|x| -x.powi(3) + x.sin()).collect());
        let dynamics = SplitDynamics::leapfrog(force, Flow::diagonal_mass(&[1.0]), 0.2, 7).unwrap();
        let map = |x: &[f64]| leapfrog_involution(&PhasePoint::from_flat(x), &dynamics).map(|p| p.to_flat());
        let det = jacobian_abs_det_fd(map, &[0.8, -0.4], None).unwrap();
        assert!((det - 1.0).abs() < 1e-6, "{det}");
    }
}
