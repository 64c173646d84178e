//! Independent numerical checks of the planning pipeline: Monte-Carlo
//! satisfaction of the cone surrogates, EM parameter recovery, flat-model
//! versus nonlinear-plant consistency and the zero-noise reductions.
//!
//! Each suite returns one [`OracleCheck`] per measured quantity.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::chance::{gaussian_reformulate, gmm_reformulate, quantile, SocConstraint};
use crate::error::Result;
use crate::exec::Exec;
use crate::flat::{flat_rollout, inverse_map, nonlinear_step, FlatInput, FlatState, PlantState};
use crate::mpc::{
    build_reference, solve_gaussian, solve_gmm, ChanceConstraint, MpcProblem, MpcWeights, SolveStatus, SolverSettings,
};
use crate::orca::compute_orca_plane;
use crate::uncertainty::{fit_gmm_em, sample_gmm, EmConfig, GaussianSpec, GmmSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub limit: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn at_most(suite: &'static str, name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self { suite, name: name.into(), measured, limit, passed: measured <= limit }
    }

    fn at_least(suite: &'static str, name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self { suite, name: name.into(), measured, limit, passed: measured >= limit }
    }
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}/{}: measured {:.3e} (limit {:.3e})", self.suite, self.name, self.measured, self.limit)
    }
}

const DT: f64 = 0.1;
const HORIZON: usize = 8;
const V_CRUISE: f64 = 40.0 / 30.0;

fn gaussian_draw(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

fn random_cov(rng: &mut ChaCha8Rng, scale: f64) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.random_range(-scale..scale));
    a * a.transpose() + Matrix3::identity() * (0.01 * scale * scale)
}

/// Fraction of `m ~ N(mu, S S^T)` with `m^T v >= b`, split over the
/// available threads in fixed-size seeded chunks.
fn mc_soc(c: &SocConstraint, v: &Vector3<f64>, samples: usize, seed: u64) -> f64 {
    mc_mixture(std::slice::from_ref(c), &[1.0], v, samples, seed)
}

fn mc_mixture(comps: &[SocConstraint], alphas: &[f64], v: &Vector3<f64>, samples: usize, seed: u64) -> f64 {
    const CHUNK: usize = 100_000;
    let chunks = samples.div_ceil(CHUNK);
    let hits: usize = Exec::best_available()
        .map_range(chunks, |k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let n = CHUNK.min(samples - k * CHUNK);
            (0..n)
                .filter(|_| {
                    let mut u: f64 = rng.random();
                    let mut pick = comps.len() - 1;
                    for (i, a) in alphas.iter().enumerate() {
                        if u < *a {
                            pick = i;
                            break;
                        }
                        u -= a;
                    }
                    let c = &comps[pick];
                    (c.mu + c.sqrt_cov * gaussian_draw(&mut rng)).dot(v) >= c.b
                })
                .count()
        })
        .into_iter()
        .sum();
    hits as f64 / samples as f64
}

/// A velocity on the cone boundary `mu^T v - b = kappa ||S^T v||`, found by
/// bisection along a random ray from a strictly feasible point.
fn boundary_velocity(c: &SocConstraint, rng: &mut ChaCha8Rng) -> Option<Vector3<f64>> {
    let inside = c.mu * ((c.b.abs() + 1.0) / c.mu.norm_squared() + 10.0 * c.kappa * c.sqrt_cov.norm() / c.mu.norm());
    if c.margin(&inside) <= 0.0 {
        return None;
    }
    // The feasible set is unbounded along some rays; try a few directions.
    for _ in 0..32 {
        let dir = gaussian_draw(rng).normalize();
        let (mut lo, mut hi) = (0.0, 1.0);
        while c.margin(&(inside + dir * hi)) > 0.0 && hi < 1e6 {
            hi *= 2.0;
        }
        if hi >= 1e6 {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if c.margin(&(inside + dir * mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Some(inside + dir * lo);
    }
    None
}

/// Boundary velocities of random Gaussian cone surrogates reach their target
/// probability: reports max |empirical - delta| per level.
pub fn chance_tightness(instances: usize, mc_samples: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for delta in [0.75, 0.9] {
        let mut worst: f64 = 0.0;
        let mut done = 0;
        while done < instances {
            let mu = gaussian_draw(&mut rng);
            let cov = random_cov(&mut rng, 0.5);
            let b = rng.random_range(-1.0..1.0);
            let c = gaussian_reformulate(&mu, &cov, b, delta)?;
            let Some(v) = boundary_velocity(&c, &mut rng) else { continue };
            let p = mc_soc(&c, &v, mc_samples, rng.random());
            worst = worst.max((p - delta).abs());
            done += 1;
        }
        out.push(OracleCheck::at_most("chance", format!("boundary |P - {delta}|"), worst, 0.01));
    }
    Ok(out)
}

fn cruising() -> FlatState {
    FlatState::new(Vector3::zeros(), Vector3::new(V_CRUISE, 0.0, 0.0), 0.0)
}

fn mpc_problem(constraints: Vec<ChanceConstraint>) -> Result<MpcProblem> {
    let x0 = cruising();
    let reference = build_reference(&x0, &Vector3::new(40.0, 0.0, 0.0), V_CRUISE, HORIZON, DT)?;
    MpcProblem::new(x0, reference, DT, MpcWeights::default(), 2.0, 5.0, constraints, SolverSettings::default())
}

/// A plane-normal component pointing back against the direction of travel.
fn opposing_component(rng: &mut ChaCha8Rng) -> Result<GaussianSpec<3>> {
    let dir = Vector3::new(rng.random_range(-1.0..-0.3), rng.random_range(-0.6..0.6), rng.random_range(-0.2..0.2));
    GaussianSpec::new(dir.normalize(), random_cov(rng, 0.2))
}

/// An offset that a velocity reachable in one step satisfies for every
/// component at level `delta`, so the instance is feasible without slack.
fn reachable_offset(comps: &[GaussianSpec<3>], delta: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let v = cruising().v + Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)) * DT;
    let kappa = quantile(delta)?;
    Ok(comps.iter().map(|c| c.mean.dot(&v) - kappa * v.dot(&(c.cov * v)).sqrt()).fold(f64::INFINITY, f64::min) - 0.01)
}

fn random_alphas(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|a| a / s).collect()
}

/// Mixture plans returned by the solver keep the true mixture probability
/// above `delta`: reports the worst `delta - P` shortfall per mixture size.
pub fn gmm_lower_bound(instances: usize, mc_samples: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for n in [2, 3] {
        let mut shortfall = f64::NEG_INFINITY;
        let mut unsolved = 0usize;
        for k in 0..instances {
            let delta = if k % 2 == 0 { 0.75 } else { 0.9 };
            let comps = (0..n).map(|_| opposing_component(&mut rng)).collect::<Result<Vec<_>>>()?;
            let b = reachable_offset(&comps, delta, &mut rng)?;
            let gmm = gmm_reformulate(&GmmSpec::new(comps, random_alphas(n, &mut rng))?, b, delta)?;
            let sol = solve_gmm(&mpc_problem(vec![ChanceConstraint::Gmm(gmm.clone())])?)?;
            if sol.status != SolveStatus::Optimal {
                unsolved += 1;
                continue;
            }
            let v = sol.predicted[1].v;
            let p = mc_mixture(&gmm.components, &gmm.alphas, &v, mc_samples, rng.random());
            shortfall = shortfall.max(delta - p);
        }
        out.push(OracleCheck::at_most("chance", format!("n={n} worst delta - P"), shortfall, 0.01));
        out.push(OracleCheck::at_most("chance", format!("n={n} unsolved instances"), unsolved as f64, 0.0));
    }
    Ok(out)
}

/// Match fitted components to the truth by trying every permutation.
fn best_matching_error(truth: &GmmSpec<3>, fit: &GmmSpec<3>) -> (f64, f64) {
    let n = truth.len();
    let perms: Vec<Vec<usize>> = match n {
        1 => vec![vec![0]],
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]],
    };
    perms
        .iter()
        .map(|p| {
            let mean = (0..n)
                .map(|i| (truth.components[i].mean - fit.components[p[i]].mean).norm())
                .fold(0.0, f64::max);
            let alpha = (0..n).map(|i| (truth.alphas[i] - fit.alphas[p[i]]).abs()).fold(0.0, f64::max);
            (mean, alpha)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::INFINITY, f64::INFINITY))
}

/// EM recovers well-separated mixtures from 5000 draws.
pub fn em_recovery(trials: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for n in [2, 3] {
        let (mut mean_err, mut alpha_err): (f64, f64) = (0.0, 0.0);
        for t in 0..trials {
            let comps = (0..n)
                .map(|k| {
                    let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + rng.random_range(-0.3..0.3);
                    let mean = Vector3::new(angle.cos(), angle.sin(), rng.random_range(-0.5..0.5)) * 3.0;
                    GaussianSpec::new(mean, random_cov(&mut rng, 0.5))
                })
                .collect::<Result<Vec<_>>>()?;
            let truth = GmmSpec::new(comps, random_alphas(n, &mut rng))?;
            let data = sample_gmm(&truth, 5000, &mut rng)?;
            let fit = fit_gmm_em(&data, n, &EmConfig { seed: seed ^ t as u64, ..EmConfig::default() })?;
            let (m, a) = best_matching_error(&truth, &fit);
            mean_err = mean_err.max(m);
            alpha_err = alpha_err.max(a);
        }
        out.push(OracleCheck::at_most("em", format!("n={n} max mean error"), mean_err, 0.1));
        out.push(OracleCheck::at_most("em", format!("n={n} max weight error"), alpha_err, 0.03));
    }
    Ok(out)
}

/// Smooth accelerations (a sinusoid about a random offset) and a constant
/// yaw rate.
fn smooth_inputs(rng: &mut ChaCha8Rng) -> Vec<FlatInput> {
    let base = Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5));
    let amp = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let (omega, phase) = (rng.random_range(0.5..3.0), rng.random_range(0.0..std::f64::consts::TAU));
    let psi_rate = rng.random_range(-0.5..0.5);
    (0..HORIZON)
        .map(|k| FlatInput::new(base + amp * (omega * k as f64 * DT + phase).sin(), psi_rate))
        .collect()
}

/// Flat rollout against the nonlinear plant with instantaneous attitude,
/// driven through the inverse map at every integration sub-step: reports
/// the worst position divergence over the horizon.
pub fn dynamics_consistency(horizons: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    const SUBSTEPS: usize = 50;
    let (mass, g) = (1.5, 9.81);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..horizons {
        let x0 = FlatState::new(
            Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0)),
            Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5)),
            rng.random_range(-3.0..3.0),
        );
        let inputs = smooth_inputs(&mut rng);
        let flat = flat_rollout(&x0, &inputs, DT)?;
        let mut plant = PlantState { r: x0.r, v: x0.v, attitude: Vector3::new(0.0, 0.0, x0.psi), mass, g };
        for (k, u) in inputs.iter().enumerate() {
            for _ in 0..SUBSTEPS {
                let cmd = inverse_map(u, plant.attitude.z, mass, g)?;
                plant = nonlinear_step(&plant, &cmd, DT / SUBSTEPS as f64, 0.0)?;
            }
            worst = worst.max((plant.r - flat[k + 1].r).norm());
        }
    }
    Ok(vec![OracleCheck::at_most("dynamics", "max position divergence [m]", worst, 1e-3)])
}

/// Zero-covariance cone surrogates coincide with the plain ORCA half-space
/// (membership disagreements), and single-component mixtures reproduce the
/// Gaussian plan cost.
pub fn reductions(membership_checks: usize, mpc_instances: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut disagreements = 0usize;
    let mut checked = 0usize;
    while checked < membership_checks {
        let pi = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let pj = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let vi = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let vj = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let plane = compute_orca_plane(&pi, &vi, &pj, &vj, 0.5, 0.5, 3.0)?.plane;
        let delta = rng.random_range(0.5..0.99);
        let soc = gaussian_reformulate(&plane.m, &Matrix3::zeros(), plane.b, delta)?;
        for _ in 0..10 {
            let v = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            disagreements += usize::from(soc.satisfied(&v) != plane.satisfied(&v));
            checked += 1;
        }
    }
    let mut cost_gap: f64 = 0.0;
    for k in 0..mpc_instances {
        let delta = if k % 2 == 0 { 0.75 } else { 0.9 };
        let spec = opposing_component(&mut rng)?;
        let b = reachable_offset(std::slice::from_ref(&spec), delta, &mut rng)?;
        let soc = gaussian_reformulate(&spec.mean, &spec.cov, b, delta)?;
        let gmm = gmm_reformulate(&GmmSpec::single(spec), b, delta)?;
        let g = solve_gaussian(&mpc_problem(vec![ChanceConstraint::Soc(soc)])?)?;
        let m = solve_gmm(&mpc_problem(vec![ChanceConstraint::Gmm(gmm)])?)?;
        let both = g.status == SolveStatus::Optimal && m.status == SolveStatus::Optimal;
        cost_gap = cost_gap.max(if both { (g.cost - m.cost).abs() } else { f64::INFINITY });
    }
    Ok(vec![
        OracleCheck::at_most("orca", "zero-noise membership disagreements", disagreements as f64, 0.0),
        OracleCheck::at_most("orca", "single-component cost gap", cost_gap, 1e-5),
        OracleCheck::at_least("orca", "membership checks", checked as f64, membership_checks as f64),
    ])
}
