//! Receding-horizon planner on the flat model.
//!
//! Inputs are condensed out of the dynamics, so the decision vector holds
//! the `4N` flat inputs followed by one shared velocity-box slack, one slack
//! per collision constraint and, for mixtures, one quantile variable
//! `kappa_i = Phi^-1(eta_i)` per component. Collision constraints act on the
//! first planned velocity only.

mod ipm;

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::chance::{normal_cdf, quantile, GmmChanceConstraint, SocConstraint, ETA_MAX, ETA_MIN};
use crate::error::{ensure_finite, Error, Result};
use crate::flat::{discretize_flat_dynamics, flat_rollout, FlatInput, FlatState, InputMatrix, StateMatrix};
use ipm::{ConeTerm, IpmSettings, Kappa, LinearTerm, MassTerm, Program};

/// Interior margin kept from the level bounds when seeding `eta`.
const ETA_SEED_MARGIN: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcWeights {
    /// Diagonal of Q over `[r, v, psi]`.
    pub q: [f64; 7],
    /// Diagonal of R over `[a, psi_rate]`.
    pub r: [f64; 4],
}

impl Default for MpcWeights {
    fn default() -> Self {
        Self { q: [10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 0.1], r: [0.1; 4] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaInit {
    Uniform,
    LargestAlpha,
    SmallestVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub slack_weight: f64,
    pub yaw_rate_max: f64,
    /// Smoothing of the cone norm, `sqrt(|w|^2 + eps^2)`.
    pub smoothing: f64,
    pub eta_inits: Vec<EtaInit>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: 150,
            slack_weight: 1e4,
            yaw_rate_max: 1.0,
            smoothing: 1e-7,
            eta_inits: vec![EtaInit::Uniform, EtaInit::LargestAlpha, EtaInit::SmallestVariance],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChanceConstraint {
    Soc(SocConstraint),
    Gmm(GmmChanceConstraint),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub x0: FlatState,
    /// `N + 1` states; entry 0 corresponds to `x0`.
    pub reference: Vec<FlatState>,
    pub a_d: StateMatrix,
    pub b_d: InputMatrix,
    pub weights: MpcWeights,
    pub v_max: f64,
    pub a_max: f64,
    pub horizon: usize,
    pub dt: f64,
    pub constraints: Vec<ChanceConstraint>,
    pub settings: SolverSettings,
}

impl MpcProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x0: FlatState,
        reference: Vec<FlatState>,
        dt: f64,
        weights: MpcWeights,
        v_max: f64,
        a_max: f64,
        constraints: Vec<ChanceConstraint>,
        settings: SolverSettings,
    ) -> Result<Self> {
        if reference.len() < 2 {
            return Err(Error::InvalidArgument("reference must hold at least two states".into()));
        }
        let (a_d, b_d) = discretize_flat_dynamics(dt)?;
        let p = Self {
            x0,
            horizon: reference.len() - 1,
            reference,
            a_d,
            b_d,
            weights,
            v_max,
            a_max,
            dt,
            constraints,
            settings,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.reference.len() != self.horizon + 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1 with N + 1 reference states".into()));
        }
        if !self.x0.is_finite() || !self.reference.iter().all(FlatState::is_finite) {
            return Err(Error::InvalidArgument("problem states must be finite".into()));
        }
        if self.weights.q.iter().chain(&self.weights.r).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        for (name, v) in [("v_max", self.v_max), ("a_max", self.a_max), ("dt", self.dt)] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Explicit tracking cost of an input sequence, by forward simulation.
    pub fn tracking_cost(&self, inputs: &[FlatInput]) -> Result<f64> {
        let states = rollout_with(&self.a_d, &self.b_d, &self.x0, inputs);
        let mut cost = 0.0;
        for (k, x) in states.iter().enumerate().skip(1) {
            let e = x.to_vector() - self.reference[k].to_vector();
            cost += (0..7).map(|i| self.weights.q[i] * e[i] * e[i]).sum::<f64>();
        }
        for u in inputs {
            let uv = u.to_vector();
            cost += (0..4).map(|i| self.weights.r[i] * uv[i] * uv[i]).sum::<f64>();
        }
        ensure_finite("tracking cost", cost)?;
        Ok(cost)
    }
}

fn rollout_with(a: &StateMatrix, b: &InputMatrix, x0: &FlatState, inputs: &[FlatInput]) -> Vec<FlatState> {
    let mut x = x0.to_vector();
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(*x0);
    for u in inputs {
        x = a * x + b * u.to_vector();
        out.push(FlatState { r: x.fixed_rows::<3>(0).into(), v: x.fixed_rows::<3>(3).into(), psi: x[6] });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Fallback,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub inputs: Vec<FlatInput>,
    pub predicted: Vec<FlatState>,
    /// Per-constraint levels; empty vectors for Gaussian constraints.
    pub etas: Vec<Vec<f64>>,
    pub status: SolveStatus,
    /// Wall time in milliseconds.
    pub solve_time: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Largest collision or velocity slack.
    pub max_slack: f64,
    /// Tracking cost (slack penalty excluded).
    pub cost: f64,
    /// Winning initialization for mixture solves.
    pub eta_init: Option<EtaInit>,
}

/// Straight-line constant-speed waypoints toward `goal`, clamped at the goal.
pub fn build_reference(current: &FlatState, goal: &Vector3<f64>, v_cruise: f64, n: usize, dt: f64) -> Result<Vec<FlatState>> {
    if !(v_cruise > 0.0 && v_cruise.is_finite()) {
        return Err(Error::InvalidArgument("v_cruise must be positive".into()));
    }
    if !(dt > 0.0) || n == 0 {
        return Err(Error::InvalidArgument("horizon and dt must be positive".into()));
    }
    let delta = goal - current.r;
    let dist = delta.norm();
    let dir = if dist > 0.0 { delta / dist } else { Vector3::zeros() };
    Ok((0..=n)
        .map(|k| {
            let travel = k as f64 * dt * v_cruise;
            let (r, v) = if travel < dist { (current.r + dir * travel, dir * v_cruise) } else { (*goal, Vector3::zeros()) };
            FlatState { r, v, psi: 0.0 }
        })
        .collect())
}

/// Condensed objective over the inputs: `0.5 u^T P u + q^T u + c`.
struct Condensed {
    p: DMatrix<f64>,
    q: DVector<f64>,
    c: f64,
}

fn condense(prob: &MpcProblem) -> Condensed {
    let n = prob.horizon;
    let nu = 4 * n;
    let mut p = DMatrix::zeros(nu, nu);
    let mut q = DVector::zeros(nu);
    let mut c = 0.0;
    let qd = prob.weights.q;
    // gamma = d x_k / d u, built recursively.
    let a_dyn = DMatrix::from_column_slice(7, 7, prob.a_d.as_slice());
    let mut gamma = DMatrix::<f64>::zeros(7, nu);
    let mut free = prob.x0.to_vector();
    for k in 1..=n {
        gamma = &a_dyn * &gamma;
        for i in 0..7 {
            for j in 0..4 {
                gamma[(i, 4 * (k - 1) + j)] = prob.b_d[(i, j)];
            }
        }
        free = prob.a_d * free;
        let e = free - prob.reference[k].to_vector();
        let mut qg = gamma.clone();
        for (i, w) in qd.iter().enumerate() {
            qg.row_mut(i).scale_mut(*w);
        }
        p += gamma.transpose() * &qg * 2.0;
        for i in 0..7 {
            c += qd[i] * e[i] * e[i];
            for col in 0..nu {
                q[col] += 2.0 * qg[(i, col)] * e[i];
            }
        }
    }
    for k in 0..n {
        for j in 0..4 {
            p[(4 * k + j, 4 * k + j)] += 2.0 * prob.weights.r[j];
        }
    }
    Condensed { p, q, c }
}

/// Structural layout of the decision vector.
struct Layout {
    nu: usize,
    s_vel: usize,
    first_slack: usize,
    first_kappa: usize,
    n: usize,
    /// Start of each constraint's kappa block (mixtures only).
    kappa_start: Vec<Option<usize>>,
}

fn layout(prob: &MpcProblem, joint_eta: bool) -> Layout {
    let nu = 4 * prob.horizon;
    let s_vel = nu;
    let first_slack = nu + 1;
    let first_kappa = first_slack + prob.constraints.len();
    let mut next = first_kappa;
    let kappa_start = prob
        .constraints
        .iter()
        .map(|c| match c {
            ChanceConstraint::Gmm(g) if joint_eta => {
                let s = next;
                next += g.len();
                Some(s)
            }
            _ => None,
        })
        .collect();
    Layout { nu, s_vel, first_slack, first_kappa, n: next, kappa_start }
}

fn kappa_bounds() -> (f64, f64) {
    (quantile(ETA_MIN).unwrap_or(-2.326), quantile(ETA_MAX).unwrap_or(2.326))
}

/// Assembles the program. `fixed_etas` pins mixture levels; otherwise they
/// are decision variables.
fn build_program(prob: &MpcProblem, cond: &Condensed, lay: &Layout, fixed_etas: Option<&[Vec<f64>]>) -> Result<Program> {
    let n = lay.n;
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (lay.nu, lay.nu)).copy_from(&cond.p);
    let mut q = DVector::zeros(n);
    q.rows_mut(0, lay.nu).copy_from(&cond.q);
    let w = prob.settings.slack_weight;
    q[lay.s_vel] = w;
    for j in 0..prob.constraints.len() {
        q[lay.first_slack + j] = w;
    }

    let mut linear = Vec::new();
    let a_max = prob.a_max;
    let yaw_max = prob.settings.yaw_rate_max;
    for k in 0..prob.horizon {
        for c in 0..4 {
            let lim = if c == 3 { yaw_max } else { a_max };
            let i = 4 * k + c;
            linear.push(LinearTerm { idx: vec![i], coef: vec![-1.0], rhs: lim });
            linear.push(LinearTerm { idx: vec![i], coef: vec![1.0], rhs: lim });
        }
    }
    // Velocity box: v_{k,c} = v0_c + dt * sum_{j<k} a_{j,c}.
    for k in 1..=prob.horizon {
        for c in 0..3 {
            let mut idx: Vec<usize> = (0..k).map(|j| 4 * j + c).collect();
            idx.push(lay.s_vel);
            let mut up = vec![-prob.dt; k];
            up.push(1.0);
            let mut lo = vec![prob.dt; k];
            lo.push(1.0);
            linear.push(LinearTerm { idx: idx.clone(), coef: up, rhs: prob.v_max - prob.x0.v[c] });
            linear.push(LinearTerm { idx, coef: lo, rhs: prob.v_max + prob.x0.v[c] });
        }
    }
    for i in lay.s_vel..lay.first_kappa {
        linear.push(LinearTerm { idx: vec![i], coef: vec![1.0], rhs: 0.0 });
    }
    let (kmin, kmax) = kappa_bounds();
    for i in lay.first_kappa..n {
        linear.push(LinearTerm { idx: vec![i], coef: vec![1.0], rhs: -kmin });
        linear.push(LinearTerm { idx: vec![i], coef: vec![-1.0], rhs: kmax });
    }

    let mut cones = Vec::new();
    let mut masses = Vec::new();
    for (j, con) in prob.constraints.iter().enumerate() {
        let slack = lay.first_slack + j;
        match con {
            ChanceConstraint::Soc(s) => cones.push(ConeTerm {
                mu: s.mu,
                s: s.sqrt_cov,
                b: s.b,
                slack,
                kappa: Kappa::Fixed(s.kappa),
                has_cov: s.sqrt_cov.iter().any(|v| *v != 0.0),
            }),
            ChanceConstraint::Gmm(g) => {
                let start = lay.kappa_start[j];
                for (i, comp) in g.components.iter().enumerate() {
                    let kappa = match (start, fixed_etas) {
                        (Some(s0), _) => Kappa::Var(s0 + i),
                        (None, Some(etas)) => Kappa::Fixed(quantile(*etas[j].get(i).ok_or_else(|| {
                            Error::InvalidArgument("one level per mixture component is required".into())
                        })?)?),
                        (None, None) => Kappa::Fixed(quantile(g.delta)?),
                    };
                    cones.push(ConeTerm {
                        mu: comp.mu,
                        s: comp.sqrt_cov,
                        b: comp.b,
                        slack,
                        kappa,
                        has_cov: comp.sqrt_cov.iter().any(|v| *v != 0.0),
                    });
                }
                if let Some(s0) = start {
                    masses.push(MassTerm { vars: (s0..s0 + g.len()).collect(), alphas: g.alphas.clone(), delta: g.delta });
                }
            }
        }
    }
    Ok(Program { p, q, linear, cones, masses, v0: prob.x0.v, dt: prob.dt })
}

/// Levels for one mixture under an initialization rule, strictly inside the
/// feasible allocation region.
fn seed_etas(g: &GmmChanceConstraint, rule: EtaInit) -> Vec<f64> {
    let lo = ETA_MIN + ETA_SEED_MARGIN;
    let hi = ETA_MAX - ETA_SEED_MARGIN;
    let uniform = vec![(0.5 * (g.delta + ETA_MAX)).clamp(lo, hi); g.len()];
    let favored = match rule {
        EtaInit::Uniform => return uniform,
        EtaInit::LargestAlpha => (0..g.len()).max_by(|&a, &b| g.alphas[a].total_cmp(&g.alphas[b])),
        EtaInit::SmallestVariance => {
            (0..g.len()).min_by(|&a, &b| g.components[a].covariance().trace().total_cmp(&g.components[b].covariance().trace()))
        }
    };
    let Some(k) = favored else { return uniform };
    let target = g.delta + 0.25 * (ETA_MAX - g.delta);
    let a_k = g.alphas[k];
    let rest = if a_k < 1.0 { ((target - a_k * hi) / (1.0 - a_k)).clamp(lo, hi) } else { lo };
    let etas: Vec<f64> = (0..g.len()).map(|i| if i == k { hi } else { rest }).collect();
    if g.allocation_margin(&etas) > 0.0 {
        etas
    } else {
        uniform
    }
}

/// Strictly feasible starting point.
fn initial_point(prob: &MpcProblem, prog: &Program, lay: &Layout, kappas: &[Vec<f64>]) -> DVector<f64> {
    let mut z = DVector::zeros(lay.n);
    let vmax_excess = prob.x0.v.amax() - prob.v_max;
    z[lay.s_vel] = vmax_excess.max(0.0) + 1.0;
    for (j, start) in lay.kappa_start.iter().enumerate() {
        if let Some(s0) = start {
            for (i, k) in kappas[j].iter().enumerate() {
                z[s0 + i] = *k;
            }
        }
    }
    let mut need = vec![0.0f64; prob.constraints.len()];
    for c in &prog.cones {
        let v = prob.x0.v;
        let kappa = match c.kappa {
            Kappa::Fixed(k) => k,
            Kappa::Var(i) => z[i],
        };
        let rho = if c.has_cov { ((c.s.transpose() * v).norm_squared() + prob.settings.smoothing.powi(2)).sqrt() } else { 0.0 };
        let margin = c.mu.dot(&v) - c.b - kappa * rho;
        let j = c.slack - lay.first_slack;
        need[j] = need[j].max(-margin);
    }
    for (j, nd) in need.iter().enumerate() {
        z[lay.first_slack + j] = nd.max(0.0) + 1.0;
    }
    z
}

struct Attempt {
    z: DVector<f64>,
    iterations: usize,
    kkt: f64,
    converged: bool,
    merit: f64,
}

fn run(prob: &MpcProblem, prog: &Program, z0: DVector<f64>) -> Attempt {
    let s = &prob.settings;
    let settings = IpmSettings { tol: s.tol, max_iters: s.max_iters, mu0: 0.1, smoothing: s.smoothing };
    let res = ipm::solve(prog, z0, &settings);
    let merit = prog.objective(&res.z);
    Attempt { z: res.z, iterations: res.iterations, kkt: res.kkt, converged: res.converged, merit }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    prob: &MpcProblem,
    cond: &Condensed,
    lay: &Layout,
    att: &Attempt,
    etas: Vec<Vec<f64>>,
    eta_init: Option<EtaInit>,
    started: Instant,
    iterations: usize,
) -> Result<MpcSolution> {
    let z = &att.z;
    let finite = z.iter().all(|v| v.is_finite());
    let inputs: Vec<FlatInput> = if finite {
        (0..prob.horizon)
            .map(|k| FlatInput::new(Vector3::new(z[4 * k], z[4 * k + 1], z[4 * k + 2]), z[4 * k + 3]))
            .collect()
    } else {
        vec![FlatInput::default(); prob.horizon]
    };
    let predicted = rollout_with(&prob.a_d, &prob.b_d, &prob.x0, &inputs);
    let max_slack = if finite { (lay.s_vel..lay.first_kappa).map(|i| z[i]).fold(0.0, f64::max) } else { f64::INFINITY };
    let status = if !(att.converged && finite) {
        SolveStatus::Fallback
    } else if max_slack > 1e-6 {
        SolveStatus::Infeasible
    } else {
        SolveStatus::Optimal
    };
    let u = z.rows(0, lay.nu).into_owned();
    let cost = if finite { 0.5 * u.dot(&(&cond.p * &u)) + cond.q.dot(&u) + cond.c } else { f64::INFINITY };
    Ok(MpcSolution {
        inputs,
        predicted,
        etas,
        status,
        solve_time: started.elapsed().as_secs_f64() * 1e3,
        iterations,
        kkt_residual: att.kkt,
        max_slack,
        cost: cost.max(0.0),
        eta_init,
    })
}

/// Solves with Gaussian (or deterministic) cone constraints.
pub fn solve_gaussian(prob: &MpcProblem) -> Result<MpcSolution> {
    let started = Instant::now();
    prob.validate()?;
    if prob.constraints.iter().any(|c| matches!(c, ChanceConstraint::Gmm(_))) {
        return Err(Error::InvalidArgument("solve_gaussian expects cone constraints only".into()));
    }
    let cond = condense(prob);
    let lay = layout(prob, false);
    let prog = build_program(prob, &cond, &lay, None)?;
    let z0 = initial_point(prob, &prog, &lay, &[]);
    let att = run(prob, &prog, z0);
    let etas = vec![Vec::new(); prob.constraints.len()];
    let iters = att.iterations;
    finish(prob, &cond, &lay, &att, etas, None, started, iters)
}

/// Solves with mixture constraints at pinned levels.
pub fn solve_gmm_fixed(prob: &MpcProblem, etas: &[Vec<f64>]) -> Result<MpcSolution> {
    let started = Instant::now();
    prob.validate()?;
    if etas.len() != prob.constraints.len() {
        return Err(Error::InvalidArgument("one level vector per constraint is required".into()));
    }
    let cond = condense(prob);
    let lay = layout(prob, false);
    let prog = build_program(prob, &cond, &lay, Some(etas))?;
    let z0 = initial_point(prob, &prog, &lay, &[]);
    let att = run(prob, &prog, z0);
    let iters = att.iterations;
    finish(prob, &cond, &lay, &att, etas.to_vec(), None, started, iters)
}

/// Jointly optimizes inputs and per-component levels. Several level
/// initializations are tried and the best local optimum is kept.
pub fn solve_gmm(prob: &MpcProblem) -> Result<MpcSolution> {
    let started = Instant::now();
    prob.validate()?;
    let cond = condense(prob);
    let lay = layout(prob, true);
    let prog = build_program(prob, &cond, &lay, None)?;
    let mut inits = prob.settings.eta_inits.clone();
    if inits.is_empty() {
        inits.push(EtaInit::Uniform);
    }
    let any_mixture = prob.constraints.iter().any(|c| matches!(c, ChanceConstraint::Gmm(g) if g.len() > 1));
    if !any_mixture {
        inits.truncate(1);
    }
    let mut best: Option<(Attempt, EtaInit)> = None;
    let mut total_iters = 0;
    let mut seen: Vec<Vec<Vec<f64>>> = Vec::new();
    for rule in inits {
        let kappas: Vec<Vec<f64>> = prob
            .constraints
            .iter()
            .map(|c| match c {
                ChanceConstraint::Gmm(g) => seed_etas(g, rule).iter().map(|e| quantile(*e)).collect::<Result<Vec<_>>>(),
                ChanceConstraint::Soc(_) => Ok(Vec::new()),
            })
            .collect::<Result<_>>()?;
        if seen.contains(&kappas) {
            continue;
        }
        let z0 = initial_point(prob, &prog, &lay, &kappas);
        seen.push(kappas);
        let att = run(prob, &prog, z0);
        total_iters += att.iterations;
        let better = match &best {
            None => true,
            Some((b, _)) => (att.converged && !b.converged) || (att.converged == b.converged && att.merit < b.merit - 1e-9),
        };
        if better {
            best = Some((att, rule));
        }
    }
    let (att, rule) = best.ok_or_else(|| Error::InvalidArgument("no level initialization available".into()))?;
    let etas = lay
        .kappa_start
        .iter()
        .zip(&prob.constraints)
        .map(|(s, c)| match (s, c) {
            (Some(s0), ChanceConstraint::Gmm(g)) => (0..g.len()).map(|i| normal_cdf(att.z[s0 + i])).collect(),
            _ => Vec::new(),
        })
        .collect();
    finish(prob, &cond, &lay, &att, etas, Some(rule), started, total_iters)
}

/// Dispatches on the constraint kind.
pub fn solve(prob: &MpcProblem) -> Result<MpcSolution> {
    if prob.constraints.iter().any(|c| matches!(c, ChanceConstraint::Gmm(_))) {
        solve_gmm(prob)
    } else {
        solve_gaussian(prob)
    }
}

/// Rolls the plan forward with the problem's own discretization.
pub fn predicted_states(prob: &MpcProblem, inputs: &[FlatInput]) -> Result<Vec<FlatState>> {
    flat_rollout(&prob.x0, inputs, prob.dt)
}

#[cfg(test)]
mod tests;
