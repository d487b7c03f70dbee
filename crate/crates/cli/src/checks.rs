//! Property-check suites behind `invmcmc check`.
//!
//! Every check is deterministic: random fixtures come from the `Check`
//! stream of a fixed seed.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use invmcmc_core::diagnostics::{compare_moments, ess, msjd};
use invmcmc_core::discrete::{mh_kernel_matrix, multiproposal_kernel_matrix, uniform_other_proposal, AcceptanceRule};
use invmcmc_core::hilbert::{sample_prior, whitened_dot};
use invmcmc_core::integrators::{
    jacobian_abs_det_fd, leapfrog_involution, Flow, PhasePoint, SplitDynamics, VectorField,
};
use invmcmc_core::involutive::{check_detailed_balance_discrete, check_involution, kernel_involution_map, KernelSpec};
use invmcmc_core::rng::{standard_normal, standard_normal_vec, stream, Purpose, RngStream};
use invmcmc_core::samplers::targets::{GaussianLikelihood, GaussianTarget, PriorOnly, WithSurrogate};
use invmcmc_core::samplers::{
    run_chain, ChainOptions, GaussianRandomWalkKernel, GradientSource, Hmc, InfHmc, JacobianMode, MetropolisHastings,
    Mhgj, MultiProposal, Pcn, Proposal, Reference, Sampler, SharedTarget, SurrogateForce, TargetModel,
    TransitionKernel,
};
use invmcmc_core::{ChainRecord, CovarianceSpectrum, McmcError};
use invmcmc_models::advection_diffusion::{
    potential_phi, solve_forward, AdProblem, FourierMode, ScalarFieldSpectral, Scenario, VelocityCoefficients,
};
use invmcmc_models::bmds::{
    bmds_grad_all, bmds_loglik, pairwise_distances, simulate, BmdsPosterior, LatentConfiguration,
};
use invmcmc_models::ctmc::{
    ctmc_loglik, ctmc_loglik_grad, simulate_observations, synthetic_posterior, CtmcObservations, GradientMode,
    MixedEffectsParams,
};
use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{CliError, Result};

pub const INVOLUTION_TOL: f64 = 1e-10;
pub const INVOLUTION_POINTS: usize = 100;
pub const VOLUME_TOL: f64 = 1e-6;
pub const BALANCE_TOL: f64 = 1e-14;
pub const CORRUPTED_MIN_VIOLATION: f64 = 1e-3;
pub const GRADIENT_REL_TOL: f64 = 1e-5;
pub const CAMERON_MARTIN_TOL: f64 = 1e-10;
pub const MOMENT_Z: f64 = 4.0;
pub const PRIOR_VARIANCE_REL_TOL: f64 = 0.05;
pub const HEAT_DECAY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Involution,
    Volume,
    #[value(name = "detailed_balance")]
    DetailedBalance,
    Gradients,
    Invariance,
    Pde,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Involution,
        Suite::Volume,
        Suite::DetailedBalance,
        Suite::Gradients,
        Suite::Invariance,
        Suite::Pde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Involution => "involution",
            Suite::Volume => "volume",
            Suite::DetailedBalance => "detailed_balance",
            Suite::Gradients => "gradients",
            Suite::Invariance => "invariance",
            Suite::Pde => "pde",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{status}] {}: {} ({:.2} s)", self.name, self.detail, self.seconds)
    }
}

/// Runs `body`, turning an error into a failed check.
fn check(name: impl Into<String>, body: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name: name.into(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// `corrupt` adds the suite's deliberately broken fixture, which must fail.
pub fn run_suite(suite: Suite, corrupt: bool) -> Vec<CheckResult> {
    match suite {
        Suite::Involution => involution_suite(corrupt),
        Suite::Volume => volume_suite(),
        Suite::DetailedBalance => detailed_balance_suite(corrupt),
        Suite::Gradients => gradients_suite(),
        Suite::Invariance => {
            let mut out = vec![cameron_martin_consistency()];
            out.extend(statistical_invariance());
            out.extend(surrogate_exactness());
            out.extend(diagnostics_calibration());
            out
        }
        Suite::Pde => pde_suite(),
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

fn rng(seed: u64) -> RngStream {
    stream(seed, 0, Purpose::Check)
}

/// `Φ(q) = Σ a q⁴/4 + b cos q + q²/2`, as a force field.
fn anharmonic_force(a: f64, b: f64) -> VectorField {
    Arc::new(move |q: &[f64]| q.iter().map(|x| -(a * x.powi(3) - b * x.sin() + x)).collect())
}

fn tanh_flow(s: f64) -> Flow {
    Flow::Drift(Arc::new(move |v: &[f64]| v.iter().map(|x| s * x.tanh()).collect()))
}

/// A correlated Gaussian with unit-scale marginals.
fn correlated_gaussian(k: usize) -> GaussianTarget {
    let mut prec = vec![vec![0.0; k]; k];
    for i in 0..k {
        prec[i][i] = 1.5 + 0.25 * i as f64;
        if i + 1 < k {
            prec[i][i + 1] = -0.5;
            prec[i + 1][i] = -0.5;
        }
    }
    GaussianTarget::new((0..k).map(|i| 0.3 * i as f64 - 0.2).collect(), prec).expect("positive definite")
}

/// A non-quadratic `Φ(q) = Σ (q_i − c_i)⁴/4 + ½ Σ w_i q_i²` against `N(0, C)`.
#[derive(Debug, Clone)]
pub struct QuarticPotential {
    spectrum: CovarianceSpectrum,
    center: Vec<f64>,
    weight: Vec<f64>,
}

impl QuarticPotential {
    pub fn new(spectrum: CovarianceSpectrum, center: Vec<f64>, weight: Vec<f64>) -> Self {
        Self {
            spectrum,
            center,
            weight,
        }
    }
}

impl TargetModel for QuarticPotential {
    fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    fn log_density(&self, q: &[f64]) -> invmcmc_core::Result<f64> {
        Ok(-q
            .iter()
            .zip(&self.center)
            .zip(&self.weight)
            .map(|((x, c), w)| (x - c).powi(4) / 4.0 + 0.5 * w * x * x)
            .sum::<f64>())
    }

    fn reference(&self) -> Reference {
        Reference::Gaussian(self.spectrum.clone())
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, q: &[f64]) -> invmcmc_core::Result<Vec<f64>> {
        Ok(q.iter()
            .zip(&self.center)
            .zip(&self.weight)
            .map(|((x, c), w)| -((x - c).powi(3) + w * x))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// involution

/// `‖S_j(S_j(x)) − x‖_∞` for every `j` of `kernel` at points `(q, v)` with
/// `q` from `draw` and `v` from the kernel's own auxiliary law.
pub fn kernel_involution_check<K: KernelSpec>(
    name: &str,
    kernel: &K,
    seed: u64,
    draw: impl Fn(&mut RngStream) -> Vec<f64>,
) -> CheckResult {
    check(name, || {
        let mut r = rng(seed);
        let mut points = Vec::with_capacity(INVOLUTION_POINTS);
        for _ in 0..INVOLUTION_POINTS {
            let state = kernel.initial_state(draw(&mut r))?;
            let aux = kernel.sample_auxiliary(&state, &mut r)?;
            points.push(kernel.flatten(&state.q, &aux));
        }
        let mut worst: f64 = 0.0;
        for j in 1..=kernel.proposal_count() {
            let report = check_involution(kernel_involution_map(kernel, j), &points, INVOLUTION_TOL)?;
            worst = worst.max(report.max_deviation);
        }
        Ok((
            worst <= INVOLUTION_TOL,
            format!(
                "max deviation {worst:.2e} over {} map(s) x {INVOLUTION_POINTS} points",
                kernel.proposal_count()
            ),
        ))
    })
}

fn dynamics_involution_check(name: &str, dynamics: &SplitDynamics, dim: usize, seed: u64) -> CheckResult {
    check(name, || {
        let mut r = rng(seed);
        let points: Vec<Vec<f64>> = (0..INVOLUTION_POINTS)
            .map(|_| standard_normal_vec(&mut r, 2 * dim))
            .collect();
        let map = |x: &[f64]| leapfrog_involution(&PhasePoint::from_flat(x), dynamics).map(|p| p.to_flat());
        let report = check_involution(map, &points, INVOLUTION_TOL)?;
        Ok((
            report.passed,
            format!(
                "max deviation {:.2e} x {INVOLUTION_POINTS} points",
                report.max_deviation
            ),
        ))
    })
}

pub fn involution_suite(corrupt: bool) -> Vec<CheckResult> {
    let normal = |k: usize| move |r: &mut RngStream| standard_normal_vec(r, k);
    let mut out = Vec::new();
    let gauss: SharedTarget = Arc::new(correlated_gaussian(3));

    out.push(match MetropolisHastings::rwm(gauss.clone(), 0.8) {
        Ok(k) => kernel_involution_check("rwm swap", &k, 1, normal(3)),
        Err(e) => failed("rwm swap", e),
    });
    out.push(
        match MetropolisHastings::new(gauss.clone(), Proposal::Langevin { step: 0.3 }) {
            Ok(k) => kernel_involution_check("mala swap", &k, 2, normal(3)),
            Err(e) => failed("mala swap", e),
        },
    );
    for (i, c) in [1.0, 0.5, 3.0].into_iter().enumerate() {
        let name = format!("mhgj c={c}");
        out.push(match Mhgj::new(gauss.clone(), c, 0.7, JacobianMode::Analytic) {
            Ok(k) => kernel_involution_check(&name, &k, 10 + i as u64, normal(3)),
            Err(e) => failed(&name, e),
        });
    }
    out.push(match Hmc::new(gauss.clone(), GradientSource::Exact, 0.1, 10, None) {
        Ok(k) => kernel_involution_check("hmc leapfrog", &k, 3, normal(3)),
        Err(e) => failed("hmc leapfrog", e),
    });
    out.push(
        match Hmc::new(gauss.clone(), GradientSource::Exact, 0.1, 10, Some(vec![1.0, 2.5, 0.4])) {
            Ok(k) => kernel_involution_check("hmc leapfrog, diagonal mass", &k, 4, normal(3)),
            Err(e) => failed("hmc leapfrog, diagonal mass", e),
        },
    );
    let scaled: SharedTarget = Arc::new(WithSurrogate::scaled(gauss.clone(), 0.7));
    out.push(match Hmc::new(scaled, GradientSource::Surrogate, 0.1, 10, None) {
        Ok(k) => kernel_involution_check("surrogate hmc leapfrog", &k, 5, normal(3)),
        Err(e) => failed("surrogate hmc leapfrog", e),
    });
    match synthetic_posterior(3, 200, 5) {
        Ok((truth, post)) => {
            let target: SharedTarget = Arc::new(post);
            let theta = truth.theta();
            let near = move |r: &mut RngStream| theta.iter().map(|t| t + 0.1 * standard_normal(r)).collect();
            for (name, source) in [
                ("hmc leapfrog, CTMC exact gradient", GradientSource::Exact),
                ("hmc leapfrog, CTMC first-order surrogate", GradientSource::Surrogate),
            ] {
                out.push(match Hmc::new(target.clone(), source, 0.02, 5, None) {
                    Ok(k) => kernel_involution_check(name, &k, 6, &near),
                    Err(e) => failed(name, e),
                });
            }
        }
        Err(e) => out.push(failed("CTMC fixture", e)),
    }
    match simulate(8, 2, 0.3, 7).and_then(|(truth, delta)| Ok((truth, BmdsPosterior::new(Arc::new(delta), 2, 0.3, 3)?)))
    {
        Ok((truth, post)) => {
            let target: SharedTarget = Arc::new(post);
            let x = truth.flat().to_vec();
            let near = move |r: &mut RngStream| x.iter().map(|t| t + 0.1 * standard_normal(r)).collect();
            for (name, source) in [
                ("hmc leapfrog, BMDS full gradient", GradientSource::Exact),
                ("hmc leapfrog, BMDS band surrogate", GradientSource::Surrogate),
            ] {
                out.push(match Hmc::new(target.clone(), source, 0.01, 5, None) {
                    Ok(k) => kernel_involution_check(name, &k, 7, &near),
                    Err(e) => failed(name, e),
                });
            }
        }
        Err(e) => out.push(failed("BMDS fixture", e)),
    }
    for (dim, seed) in [(2, 20), (5, 21)] {
        match SplitDynamics::leapfrog(anharmonic_force(0.2, 0.5), tanh_flow(1.3), 0.1, 8) {
            Ok(d) => out.push(dynamics_involution_check(
                &format!("leapfrog, nonlinear odd drift, dim {dim}"),
                &d,
                dim,
                seed,
            )),
            Err(e) => out.push(failed("leapfrog, nonlinear odd drift", e)),
        }
        match SplitDynamics::new(anharmonic_force(0.2, 0.5), Flow::Rotation, 0.05, 0.1, 8) {
            Ok(d) => out.push(dynamics_involution_check(
                &format!("kick-rotate-kick, dim {dim}"),
                &d,
                dim,
                seed,
            )),
            Err(e) => out.push(failed("kick-rotate-kick", e)),
        }
    }
    let spectrum = CovarianceSpectrum::power_law(5, 1.0).expect("valid spectrum");
    let prior_draw = {
        let s = spectrum.clone();
        move |r: &mut RngStream| sample_prior(&s, r)
    };
    let like: SharedTarget = Arc::new(
        GaussianLikelihood::new(
            spectrum.clone(),
            vec![0.5, -0.3, 0.2, 0.0, 0.1],
            vec![0.4, 1.0, 0.3, 2.0, 0.7],
        )
        .expect("valid likelihood"),
    );
    let like_surrogate: SharedTarget = Arc::new(WithSurrogate::scaled(like.clone(), 0.6));
    for (name, target, force) in [
        ("inf-hmc rotation, exact force", like.clone(), SurrogateForce::Exact),
        (
            "inf-hmc rotation, surrogate force",
            like_surrogate,
            SurrogateForce::Surrogate,
        ),
        ("inf-hmc rotation, zero force", like.clone(), SurrogateForce::Zero),
    ] {
        out.push(match InfHmc::new(target, force, 0.05, 0.1, 6) {
            Ok(k) => kernel_involution_check(name, &k, 8, &prior_draw),
            Err(e) => failed(name, e),
        });
    }
    out.push(match Pcn::new(like.clone(), 0.7) {
        Ok(k) => kernel_involution_check("pcn swap", &k, 9, &prior_draw),
        Err(e) => failed("pcn swap", e),
    });
    out.push(match MultiProposal::mpcn(like.clone(), 0.7, 4) {
        Ok(k) => kernel_involution_check("mpcn swaps, p=4", &k, 10, &prior_draw),
        Err(e) => failed("mpcn swaps", e),
    });
    let walk: Arc<dyn TransitionKernel> = Arc::new(GaussianRandomWalkKernel { scale: 0.8 });
    out.push(match MultiProposal::new(gauss.clone(), walk.clone(), walk, 3) {
        Ok(k) => kernel_involution_check("multiproposal swaps, p=3", &k, 11, normal(3)),
        Err(e) => failed("multiproposal swaps", e),
    });
    match invmcmc_core::discrete::DiscreteMetropolis::uniform(vec![0.1, 0.2, 0.3, 0.4], AcceptanceRule::Metropolis) {
        Ok(k) => out.push(kernel_involution_check("discrete swap", &k, 12, |r: &mut RngStream| {
            vec![r.random_range(0..4usize) as f64]
        })),
        Err(e) => out.push(failed("discrete swap", e)),
    }
    if corrupt {
        let skew = Flow::Drift(Arc::new(|v: &[f64]| v.iter().map(|x| x + x * x).collect()));
        match SplitDynamics::leapfrog(anharmonic_force(0.2, 0.5), skew, 0.1, 5) {
            Ok(d) => out.push(dynamics_involution_check("corrupted fixture: non-odd drift", &d, 2, 13)),
            Err(e) => out.push(failed("corrupted fixture: non-odd drift", e)),
        }
    }
    out
}

fn failed(name: &str, err: impl Into<CliError>) -> CheckResult {
    let err = err.into();
    check(name, || Err(err))
}

// ---------------------------------------------------------------------------
// volume

fn volume_check(
    name: &str,
    map: impl Fn(&[f64]) -> invmcmc_core::Result<Vec<f64>>,
    points: &[Vec<f64>],
) -> CheckResult {
    check(name, || {
        let mut worst: f64 = 0.0;
        for x in points {
            let det = jacobian_abs_det_fd(&map, x, None)?;
            worst = worst.max((det - 1.0).abs());
        }
        Ok((
            worst <= VOLUME_TOL,
            format!("max ||det| - 1| = {worst:.2e} x {} points", points.len()),
        ))
    })
}

pub fn volume_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    for dim in 2..=6usize {
        let mut r = rng(100 + dim as u64);
        let points: Vec<Vec<f64>> = (0..10).map(|_| standard_normal_vec(&mut r, 2 * dim)).collect();
        let mass: Vec<f64> = (0..dim).map(|i| 0.5 + 0.4 * i as f64).collect();
        let variants: Vec<(String, invmcmc_core::Result<SplitDynamics>)> = vec![
            (
                format!("leapfrog, diagonal mass, dim {dim}"),
                SplitDynamics::leapfrog(anharmonic_force(0.3, 0.5), Flow::diagonal_mass(&mass), 0.1, 10),
            ),
            (
                format!("leapfrog, nonlinear odd drift, dim {dim}"),
                SplitDynamics::leapfrog(anharmonic_force(0.3, 0.5), tanh_flow(1.2), 0.1, 10),
            ),
            (
                format!("kick-rotate-kick, dim {dim}"),
                SplitDynamics::new(anharmonic_force(0.3, 0.5), Flow::Rotation, 0.05, 0.1, 10),
            ),
        ];
        for (name, d) in variants {
            out.push(match d {
                Ok(d) => volume_check(
                    &name,
                    |x: &[f64]| leapfrog_involution(&PhasePoint::from_flat(x), &d).map(|p| p.to_flat()),
                    &points,
                ),
                Err(e) => failed(&name, e),
            });
        }
        let target: SharedTarget = Arc::new(GaussianTarget::standard(dim));
        let name = format!("mhgj (q, v) -> (c v, q / c), dim {dim}");
        out.push(match Mhgj::new(target, 2.5, 0.5, JacobianMode::Analytic) {
            Ok(k) => volume_check(&name, kernel_involution_map(&k, 1), &points),
            Err(e) => failed(&name, e),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// detailed balance

fn random_pmf(r: &mut RngStream, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| 0.05 + r.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// A row-stochastic matrix with positive off-diagonal entries.
fn random_proposal(r: &mut RngStream, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .map(|j| if i == j { 0.0 } else { 0.1 + r.random::<f64>() })
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            row
        })
        .collect()
}

/// `a I + (1 − a)` uniform: symmetric, so reversible for the uniform measure.
fn lazy_uniform(n: usize, a: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (1.0 - a) / n as f64 + if i == j { a } else { 0.0 })
                .collect()
        })
        .collect()
}

fn balance_check(name: &str, pmf: &[f64], kernel: invmcmc_core::Result<Vec<Vec<f64>>>) -> CheckResult {
    check(name, || {
        let v = check_detailed_balance_discrete(pmf, &kernel?)?;
        Ok((v <= BALANCE_TOL, format!("max |μ_i K_ij − μ_j K_ji| = {v:.2e}")))
    })
}

pub fn detailed_balance_suite(corrupt: bool) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut r = rng(200);
    for n in 2..=6usize {
        let pmf = random_pmf(&mut r, n);
        let proposal = random_proposal(&mut r, n);
        let uniform_ref = vec![1.0 / n as f64; n];
        out.push(balance_check(
            &format!("rwm, uniform proposal, n={n}"),
            &pmf,
            mh_kernel_matrix(&pmf, &uniform_other_proposal(n), AcceptanceRule::Metropolis),
        ));
        out.push(balance_check(
            &format!("mh, asymmetric proposal, n={n}"),
            &pmf,
            mh_kernel_matrix(&pmf, &proposal, AcceptanceRule::Metropolis),
        ));
        out.push(balance_check(
            &format!("barker, asymmetric proposal, n={n}"),
            &pmf,
            mh_kernel_matrix(&pmf, &proposal, AcceptanceRule::Barker),
        ));
        // Q = Q̄ reversible for a non-uniform reference: MH kernel for it
        let reference = random_pmf(&mut r, n);
        let ref_walk = mh_kernel_matrix(&reference, &uniform_other_proposal(n), AcceptanceRule::Metropolis);
        for p in 1..=3usize {
            out.push(balance_check(
                &format!("barker multiproposal, uniform cloud, n={n}, p={p}"),
                &pmf,
                multiproposal_kernel_matrix(
                    &pmf,
                    &uniform_ref,
                    &uniform_other_proposal(n),
                    &uniform_other_proposal(n),
                    p,
                ),
            ));
            out.push(balance_check(
                &format!("barker multiproposal, lazy cloud, n={n}, p={p}"),
                &pmf,
                multiproposal_kernel_matrix(&pmf, &uniform_ref, &lazy_uniform(n, 0.3), &lazy_uniform(n, 0.3), p),
            ));
            if let Ok(walk) = &ref_walk {
                out.push(balance_check(
                    &format!("barker multiproposal, non-uniform reference, n={n}, p={p}"),
                    &pmf,
                    multiproposal_kernel_matrix(&pmf, &reference, walk, walk, p),
                ));
            }
        }
    }
    let pmf = [0.05, 0.15, 0.3, 0.5];
    let corrupted = mh_kernel_matrix(&pmf, &uniform_other_proposal(4), AcceptanceRule::Corrupted);
    out.push(check("negative control: corrupted acceptance is detected", || {
        let v = check_detailed_balance_discrete(&pmf, &corrupted.clone()?)?;
        Ok((
            v > CORRUPTED_MIN_VIOLATION,
            format!("violation {v:.2e} (must exceed {CORRUPTED_MIN_VIOLATION:.0e})"),
        ))
    }));
    if corrupt {
        out.push(balance_check("corrupted fixture: always-accept rule", &pmf, corrupted));
    }
    out
}

// ---------------------------------------------------------------------------
// gradients

fn relative_gap(g: &[f64], fd: &[f64]) -> f64 {
    g.iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn central_difference(
    f: impl Fn(&[f64]) -> invmcmc_core::Result<f64>,
    x: &[f64],
    h: f64,
) -> invmcmc_core::Result<Vec<f64>> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            Ok((f(&a)? - f(&b)?) / (2.0 * h))
        })
        .collect()
}

/// A CTMC with an intercept and one dense covariate.
fn random_ctmc(d: usize, r: &mut RngStream) -> invmcmc_core::Result<MixedEffectsParams> {
    let mut intercept = DMatrix::from_element(d, d, 1.0);
    intercept.fill_diagonal(0.0);
    let mut covariate = DMatrix::from_fn(d, d, |_, _| standard_normal(r));
    covariate.fill_diagonal(0.0);
    let beta = vec![-0.5 + 0.3 * standard_normal(r), 0.3 * standard_normal(r)];
    let lambda = (0..d * (d - 1)).map(|_| 0.5 * standard_normal(r)).collect();
    MixedEffectsParams::new(d, beta, lambda, vec![intercept, covariate])
}

pub fn ctmc_gradient_check(d: usize, seed: u64) -> CheckResult {
    check(
        format!("ctmc exact gradient vs central differences, D={d}, seed {seed}"),
        || {
            let mut r = rng(300 + seed);
            let params = random_ctmc(d, &mut r)?;
            let obs = simulate_observations(
                &params,
                CtmcObservations::uniform_initial(d),
                &[0.3, 1.0, 2.5],
                200,
                seed,
            )?;
            let g = ctmc_loglik_grad(&params, &obs, GradientMode::exact())?;
            let fd = central_difference(
                |th| Ok(ctmc_loglik(&params.with_theta(th)?, &obs)?.value),
                &params.theta(),
                1e-6,
            )?;
            let gap = relative_gap(&g, &fd);
            Ok((
                gap <= GRADIENT_REL_TOL,
                format!("max relative gap {gap:.2e} over {} parameters", g.len()),
            ))
        },
    )
}

pub fn bmds_gradient_check(n: usize, d: usize, seed: u64) -> CheckResult {
    check(
        format!("bmds full gradient vs central differences, N={n}, D={d}, seed {seed}"),
        || {
            let sigma2 = 0.4;
            let (truth, delta) = simulate(n, d, sigma2, seed)?;
            let mut r = rng(400 + seed);
            let x: Vec<f64> = truth.flat().iter().map(|v| v + 0.3 * standard_normal(&mut r)).collect();
            let config = LatentConfiguration::from_flat(x.clone(), n, d, sigma2)?;
            let g = bmds_grad_all(&config, &delta, None)?;
            let fd = central_difference(
                |y| Ok(bmds_loglik(&LatentConfiguration::from_flat(y.to_vec(), n, d, sigma2)?, &delta)?.value),
                &x,
                1e-6,
            )?;
            let gap = relative_gap(&g, &fd);
            Ok((
                gap <= GRADIENT_REL_TOL,
                format!("max relative gap {gap:.2e} over {} coordinates", g.len()),
            ))
        },
    )
}

pub fn gradients_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    for d in 2..=5 {
        for seed in 0..2 {
            out.push(ctmc_gradient_check(d, seed));
        }
    }
    for n in 3..=8 {
        for d in 1..=3 {
            out.push(bmds_gradient_check(n, d, (n * 10 + d) as u64));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// invariance

/// The ∞HMC acceptance from the Cameron–Martin path terms against
/// `H = ½‖q‖²_C + ½‖v‖²_C + Φ(q)` on 100 random trajectories over a
/// quadratic and a quartic `Φ` with five modes.
pub fn cameron_martin_consistency() -> CheckResult {
    check("cameron-martin acceptance vs finite-dimensional energy", || {
        let spectrum = CovarianceSpectrum::power_law(5, 1.0)?;
        let targets: Vec<SharedTarget> = vec![
            Arc::new(GaussianLikelihood::new(
                spectrum.clone(),
                vec![0.5, -0.3, 0.2, 0.0, 0.1],
                vec![0.4, 1.0, 0.3, 2.0, 0.7],
            )?),
            Arc::new(QuarticPotential::new(
                spectrum.clone(),
                vec![0.3, -0.2, 0.1, 0.0, 0.05],
                vec![0.5, 1.0, 1.5, 2.0, 2.5],
            )),
        ];
        let mut r = rng(500);
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for target in &targets {
            for (delta, steps) in [(0.1, 4), (0.25, 10)] {
                let k = InfHmc::new(target.clone(), SurrogateForce::Exact, delta / 2.0, delta, steps)?;
                for _ in 0..25 {
                    let s = k.initial_state(sample_prior(&spectrum, &mut r))?;
                    let v = sample_prior(&spectrum, &mut r);
                    let (log, log_alpha, _) = k.trajectory(&s, &v)?;
                    let h = |p: &PhasePoint| -> invmcmc_core::Result<f64> {
                        Ok(
                            0.5 * whitened_dot(&p.q, &p.q, &spectrum) + 0.5 * whitened_dot(&p.v, &p.v, &spectrum)
                                - target.log_density(&p.q)?,
                        )
                    };
                    let last = log.states.last().ok_or(McmcError::config("empty trajectory"))?;
                    let want = h(&log.states[0])? - h(last)?;
                    worst = worst.max((log_alpha - want).abs());
                    count += 1;
                }
            }
        }
        Ok((
            worst <= CAMERON_MARTIN_TOL,
            format!("max |log α − (H_0 − H_T)| = {worst:.2e} over {count} trajectories"),
        ))
    })
}

/// Largest `|z|` of the mean and centered second moment of each component,
/// with standard errors deflated by the ESS.
pub fn moment_z(chain: &ChainRecord, burn_in: usize, mean: &[f64], var: &[f64]) -> invmcmc_core::Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..mean.len() {
        let x = chain.component(i, burn_in);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let z1 = (m - mean[i]).abs() / (var[i] / ess(&x)?).sqrt();
        let sq: Vec<f64> = x.iter().map(|v| (v - mean[i]).powi(2)).collect();
        let m2 = sq.iter().sum::<f64>() / sq.len() as f64;
        let z2 = (m2 - var[i]).abs() / (2.0 * var[i] * var[i] / ess(&sq)?).sqrt();
        worst = worst.max(z1).max(z2);
    }
    Ok(worst)
}

fn moment_check(
    name: &str,
    chain: invmcmc_core::Result<ChainRecord>,
    burn_in: usize,
    mean: &[f64],
    var: &[f64],
) -> CheckResult {
    check(name, || {
        let chain = chain?;
        let z = moment_z(&chain, burn_in, mean, var)?;
        Ok((
            z <= MOMENT_Z,
            format!("max |z| = {z:.2} (acceptance {:.2})", chain.acceptance_rate(burn_in)),
        ))
    })
}

fn prior_variance_check(
    name: &str,
    chain: invmcmc_core::Result<ChainRecord>,
    spectrum: &CovarianceSpectrum,
) -> CheckResult {
    check(name, || {
        let chain = chain?;
        let mut worst: f64 = 0.0;
        for (i, l) in spectrum.eigenvalues().iter().enumerate() {
            let x = chain.component(i, 0);
            let v = x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64;
            worst = worst.max((v / l - 1.0).abs());
        }
        Ok((
            worst <= PRIOR_VARIANCE_REL_TOL,
            format!(
                "max relative per-mode variance error {:.2}% at {} steps",
                100.0 * worst,
                chain.n_iter()
            ),
        ))
    })
}

pub fn statistical_invariance() -> Vec<CheckResult> {
    let g = correlated_gaussian(2);
    let cov = g.covariance();
    let mean = g.mean().to_vec();
    let var: Vec<f64> = (0..2).map(|i| cov[i][i]).collect();
    let gauss: SharedTarget = Arc::new(g);
    let start = vec![0.0; 2];
    let mut out = vec![
        moment_check(
            "rwm on a correlated gaussian",
            MetropolisHastings::rwm(gauss.clone(), 1.4).and_then(|k| run_chain(&k, start.clone(), 100_000, 1)),
            1000,
            &mean,
            &var,
        ),
        moment_check(
            "mala on a correlated gaussian",
            MetropolisHastings::new(gauss.clone(), Proposal::Langevin { step: 0.6 })
                .and_then(|k| run_chain(&k, start.clone(), 50_000, 2)),
            500,
            &mean,
            &var,
        ),
        moment_check(
            "mhgj on a correlated gaussian",
            Mhgj::new(gauss.clone(), 1.0, 0.8, JacobianMode::Analytic)
                .and_then(|k| run_chain(&k, start.clone(), 50_000, 3)),
            500,
            &mean,
            &var,
        ),
        moment_check(
            "hmc on a correlated gaussian",
            Hmc::new(gauss.clone(), GradientSource::Exact, 0.25, 8, None)
                .and_then(|k| run_chain(&k, start.clone(), 20_000, 4)),
            500,
            &mean,
            &var,
        ),
        moment_check(
            "surrogate hmc (0.7 x gradient) on a correlated gaussian",
            Hmc::new(
                Arc::new(WithSurrogate::scaled(gauss.clone(), 0.7)),
                GradientSource::Surrogate,
                0.25,
                8,
                None,
            )
            .and_then(|k| run_chain(&k, start.clone(), 20_000, 5)),
            500,
            &mean,
            &var,
        ),
    ];
    let walk: Arc<dyn TransitionKernel> = Arc::new(GaussianRandomWalkKernel { scale: 1.2 });
    out.push(moment_check(
        "barker multiproposal (p=4) on a correlated gaussian",
        MultiProposal::new(gauss.clone(), walk.clone(), walk, 4).and_then(|k| run_chain(&k, start.clone(), 50_000, 6)),
        500,
        &mean,
        &var,
    ));

    let spectrum = CovarianceSpectrum::power_law(5, 1.0).expect("valid spectrum");
    let prior: SharedTarget = Arc::new(PriorOnly::new(spectrum.clone()));
    out.push(prior_variance_check(
        "pcn holds the prior (Φ ≡ 0)",
        Pcn::new(prior.clone(), 0.5).and_then(|k| run_chain(&k, vec![0.0; 5], 100_000, 7)),
        &spectrum,
    ));
    out.push(prior_variance_check(
        "mpcn (p=4) holds the prior (Φ ≡ 0)",
        MultiProposal::mpcn(prior, 0.5, 4).and_then(|k| run_chain(&k, vec![0.0; 5], 100_000, 8)),
        &spectrum,
    ));
    let like = GaussianLikelihood::new(spectrum, vec![0.5, -0.3, 0.2, 0.0, 0.1], vec![0.4, 1.0, 0.3, 2.0, 0.7])
        .expect("valid likelihood");
    let (pm, pv) = like.posterior();
    let like: SharedTarget = Arc::new(like);
    out.push(moment_check(
        "inf-hmc on a conjugate gaussian posterior",
        InfHmc::new(like.clone(), SurrogateForce::Exact, 0.15, 0.3, 5)
            .and_then(|k| run_chain(&k, vec![0.0; 5], 30_000, 9)),
        500,
        &pm,
        &pv,
    ));
    out.push(moment_check(
        "mpcn (p=4) on a conjugate gaussian posterior",
        MultiProposal::mpcn(like, 0.6, 4).and_then(|k| run_chain(&k, vec![0.0; 5], 60_000, 10)),
        1000,
        &pm,
        &pv,
    ));
    out
}

fn hmc_chain(
    target: SharedTarget,
    source: GradientSource,
    initial: Vec<f64>,
    n: usize,
    seed: u64,
) -> invmcmc_core::Result<ChainRecord> {
    let mut k = Hmc::new(target, source, 0.05, 8, None)?;
    k.run(initial, &ChainOptions::new(n, seed).adapt(SURROGATE_BURN_IN, 0.7))
}

const SURROGATE_BURN_IN: usize = 500;

fn worst_comparison(pairs: &[(Vec<f64>, Vec<f64>)]) -> invmcmc_core::Result<f64> {
    let mut worst: f64 = 0.0;
    for (a, b) in pairs {
        let c = compare_moments(a, b)?;
        worst = worst.max(c.z_mean.abs()).max(c.z_variance.abs());
    }
    Ok(worst)
}

/// Surrogate = exact reproduces exact HMC bit for bit; real surrogates
/// keep the exact posterior moments.
pub fn surrogate_exactness() -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(check(
        "surrogate hmc with the exact gradient is bitwise exact hmc",
        || {
            let inner: SharedTarget = Arc::new(correlated_gaussian(3));
            let g = inner.clone();
            let same: SharedTarget = Arc::new(WithSurrogate::new(
                inner.clone(),
                Arc::new(move |q: &[f64]| g.gradient(q).unwrap_or_else(|_| vec![f64::NAN; q.len()])),
            ));
            let opts = ChainOptions::new(2000, 77).adapt(200, 0.7);
            let a = Hmc::new(inner, GradientSource::Exact, 0.2, 7, None)?.run(vec![0.0; 3], &opts)?;
            let b = Hmc::new(same, GradientSource::Surrogate, 0.2, 7, None)?.run(vec![0.0; 3], &opts)?;
            let same = a.same_trajectory(&b);
            Ok((same, format!("{} steps, traces identical: {same}", a.n_iter())))
        },
    ));
    out.push(check(
        "surrogate inf-hmc with the exact gradient is bitwise exact inf-hmc",
        || {
            let spectrum = CovarianceSpectrum::power_law(5, 1.0)?;
            let inner: SharedTarget = Arc::new(QuarticPotential::new(spectrum, vec![0.2; 5], vec![1.0; 5]));
            let same: SharedTarget = Arc::new(WithSurrogate::scaled(inner.clone(), 1.0));
            let opts = ChainOptions::new(2000, 78);
            let a = InfHmc::new(inner, SurrogateForce::Exact, 0.1, 0.2, 5)?.run(vec![0.0; 5], &opts)?;
            let b = InfHmc::new(same, SurrogateForce::Surrogate, 0.1, 0.2, 5)?.run(vec![0.0; 5], &opts)?;
            let same = a.same_trajectory(&b);
            Ok((same, format!("{} steps, traces identical: {same}", a.n_iter())))
        },
    ));
    out.push(check(
        "ctmc first-order surrogate hmc matches exact hmc moments",
        || {
            let (truth, posterior) = synthetic_posterior(3, 500, 11)?;
            let target: SharedTarget = Arc::new(posterior);
            let start = truth.theta();
            let exact = hmc_chain(target.clone(), GradientSource::Exact, start.clone(), 4000, 1)?;
            let surrogate = hmc_chain(target, GradientSource::Surrogate, start, 4000, 2)?;
            let pairs: Vec<_> = (0..truth.parameter_count())
                .map(|i| {
                    (
                        exact.component(i, SURROGATE_BURN_IN),
                        surrogate.component(i, SURROGATE_BURN_IN),
                    )
                })
                .collect();
            let z = worst_comparison(&pairs)?;
            Ok((
                z <= MOMENT_Z,
                format!(
                    "max |z| = {z:.2} over {} parameters (surrogate acceptance {:.2})",
                    pairs.len(),
                    surrogate.acceptance_rate(SURROGATE_BURN_IN)
                ),
            ))
        },
    ));
    out.push(check(
        "bmds band surrogate hmc matches full-gradient hmc moments",
        || {
            let (n, d, sigma2) = (20, 2, 0.25);
            let (truth, delta) = simulate(n, d, sigma2, 12)?;
            let target: SharedTarget = Arc::new(BmdsPosterior::new(Arc::new(delta), d, sigma2, 17)?);
            let start = truth.flat().to_vec();
            let full = hmc_chain(target.clone(), GradientSource::Exact, start.clone(), 4000, 3)?;
            let band = hmc_chain(target, GradientSource::Surrogate, start, 4000, 4)?;
            // rotation-invariant functionals: a few distances and ‖X‖²
            let functionals = |c: &ChainRecord| -> Vec<Vec<f64>> {
                let states = c.post_burn_in(SURROGATE_BURN_IN);
                let dist: Vec<Vec<f64>> = states.iter().map(|x| pairwise_distances(x, n, d)).collect();
                let mut f: Vec<Vec<f64>> = [0, 7, 41, 150]
                    .iter()
                    .map(|&p| dist.iter().map(|r| r[p]).collect())
                    .collect();
                f.push(states.iter().map(|x| x.iter().map(|v| v * v).sum()).collect());
                f
            };
            let pairs: Vec<_> = functionals(&full).into_iter().zip(functionals(&band)).collect();
            let z = worst_comparison(&pairs)?;
            Ok((
                z <= MOMENT_Z,
                format!(
                    "max |z| = {z:.2} over {} functionals (band acceptance {:.2})",
                    pairs.len(),
                    band.acceptance_rate(SURROGATE_BURN_IN)
                ),
            ))
        },
    ));
    out
}

/// ESS of an AR(1) series and MSJD of i.i.d. normals against their
/// closed forms.
pub fn diagnostics_calibration() -> Vec<CheckResult> {
    vec![
        check("ess of AR(1), φ = 0.9", || {
            let phi: f64 = 0.9;
            let want = (1.0 - phi) / (1.0 + phi);
            let mut worst: f64 = 0.0;
            for seed in 0..5 {
                let mut r = rng(600 + seed);
                let n = 100_000;
                let mut x = Vec::with_capacity(n);
                let mut cur = standard_normal(&mut r) / (1.0 - phi * phi).sqrt();
                for _ in 0..n {
                    x.push(cur);
                    cur = phi * cur + standard_normal(&mut r);
                }
                worst = worst.max((ess(&x)? / n as f64 / want - 1.0).abs());
            }
            Ok((
                worst <= 0.3,
                format!("max relative error of ESS/n {:.1}% over 5 series", 100.0 * worst),
            ))
        }),
        check("msjd of i.i.d. N(0, I_d)", || {
            let mut worst: f64 = 0.0;
            for d in [1usize, 3, 10] {
                let mut r = rng(700 + d as u64);
                let states: Vec<Vec<f64>> = (0..50_000).map(|_| standard_normal_vec(&mut r, d)).collect();
                worst = worst.max((msjd(&states)? / (2.0 * d as f64) - 1.0).abs());
            }
            Ok((
                worst <= 0.05,
                format!("max relative error {:.2}% for d in {{1, 3, 10}}", 100.0 * worst),
            ))
        }),
    ]
}

// ---------------------------------------------------------------------------
// pde

/// Pure diffusion of Fourier modes against `e^{−κ(2π)²|k|²t}`.
pub fn heat_decay_check() -> CheckResult {
    check("heat decay: analytic factor e^{-κ(2π)²|k|²t}", || {
        let kappa = Scenario::default().kappa;
        let vel = VelocityCoefficients::zeros(1)?;
        let modes = [
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
            FourierMode {
                k: [2, 3],
                cos: 0.5,
                sin: -0.2,
            },
        ];
        let f0 = ScalarFieldSpectral::from_modes(Scenario::default().grid, &modes)?;
        let times = [0.25, 0.5, 1.0, 2.0];
        let out = solve_forward(&f0, &vel, kappa, &times)?;
        let mut worst: f64 = 0.0;
        for (t, f) in times.iter().zip(&out) {
            for m in &modes {
                let k2 = (m.k[0] * m.k[0] + m.k[1] * m.k[1]) as f64;
                let factor = (-kappa * (2.0 * PI).powi(2) * k2 * t).exp();
                let want = f0.coeff(m.k[0], m.k[1]) * factor;
                worst = worst.max((f.coeff(m.k[0], m.k[1]) - want).norm());
            }
        }
        Ok((worst <= HEAT_DECAY_TOL, format!("max coefficient error {worst:.2e}")))
    })
}

pub fn pde_suite() -> Vec<CheckResult> {
    let scenario = Scenario::default();
    let theta0 = |m: usize| ScalarFieldSpectral::from_modes(m, &scenario.theta0);
    let vel = VelocityCoefficients::new(1, vec![0.4, -0.2, 0.1, 0.3, -0.25, 0.15, 0.05, -0.1]);
    vec![
        heat_decay_check(),
        check("mean conserved, field stays real", || {
            let modes = [
                FourierMode {
                    k: [0, 0],
                    cos: 0.7,
                    sin: 0.0,
                },
                FourierMode {
                    k: [1, 1],
                    cos: 1.0,
                    sin: 0.3,
                },
            ];
            let f0 = ScalarFieldSpectral::from_modes(16, &modes)?;
            let out = solve_forward(&f0, vel.as_ref().map_err(Clone::clone)?, 0.01, &[0.1, 0.3])?;
            let drift = out.iter().map(|f| (f.mean() - f0.mean()).abs()).fold(0.0, f64::max);
            let herm = out.iter().map(|f| f.hermitian_error()).fold(0.0, f64::max);
            Ok((
                drift <= 1e-14 && herm <= 1e-12,
                format!("mean drift {drift:.1e}, hermitian error {herm:.1e}"),
            ))
        }),
        check("mirrored velocity gives the mirrored field", || {
            let v = vel.as_ref().map_err(Clone::clone)?;
            let f0 = theta0(16)?;
            let a = &solve_forward(&f0, v, 0.01, &[0.3])?[0];
            let b = &solve_forward(&f0, &v.mirrored(), 0.01, &[0.3])?[0];
            let worst = [[0.1, 0.3], [0.77, 0.21], [0.5, 0.0], [0.33, 0.9]]
                .iter()
                .map(|x| (a.evaluate(*x) - b.evaluate([x[0], (1.0 - x[1]) % 1.0])).abs())
                .fold(0.0, f64::max);
            Ok((worst <= 1e-10, format!("max pointwise gap {worst:.1e}")))
        }),
        check("potential is invariant under the mirror", || {
            let s = Scenario {
                grid: 16,
                ..Scenario::default()
            };
            let problem = AdProblem {
                theta0: theta0(16)?,
                kappa: s.kappa,
                obs: s.generate_data()?,
                kv: s.velocity_modes,
            };
            let v = vel.as_ref().map_err(Clone::clone)?;
            let (a, b) = (potential_phi(&problem, v)?, potential_phi(&problem, &v.mirrored())?);
            let gap = (a - b).abs() / a.max(1.0);
            Ok((gap <= 1e-8, format!("Φ(v) = {a:.6}, relative gap {gap:.1e}")))
        }),
        check("grid refinement 32 -> 64 at the true velocity", || {
            let truth = scenario.truth()?;
            let pts = [[0.25, 0.5], [0.1, 0.9], [0.6, 0.3]];
            let at = |m: usize| -> invmcmc_core::Result<Vec<f64>> {
                let f = &solve_forward(&theta0(m)?, &truth, scenario.kappa, &[0.5])?[0];
                Ok(pts.iter().map(|&x| f.evaluate(x)).collect())
            };
            let (coarse, fine) = (at(32)?, at(64)?);
            let gap = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok((gap <= 1e-6, format!("max observation change {gap:.1e}")))
        }),
    ]
}
