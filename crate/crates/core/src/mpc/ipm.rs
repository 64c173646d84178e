//! Dense primal-dual interior-point method for small smooth programs
//!
//! ```text
//! minimize    0.5 z^T P z + q^T z
//! subject to  g_j(z) >= 0
//! ```
//!
//! where each `g_j` is affine, a smoothed second-order cone on the first
//! planned velocity, or a mixture-mass constraint `sum_i alpha_i Phi(kappa_i) >= delta`.
//! Nonconvex terms are handled with an inertia-corrected Newton matrix, so
//! only local optimality is claimed.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::chance::{normal_cdf, normal_pdf};

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub mu0: f64,
    pub smoothing: f64,
}

/// `coef . z[idx] + rhs >= 0`.
#[derive(Debug, Clone)]
pub(crate) struct LinearTerm {
    pub idx: Vec<usize>,
    pub coef: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Kappa {
    Fixed(f64),
    Var(usize),
}

/// `mu^T v1 - b + z[slack] - kappa * rho(S^T v1) >= 0` with
/// `v1 = v0 + dt * z[0..3]` and `rho(w) = sqrt(|w|^2 + eps^2)`.
#[derive(Debug, Clone)]
pub(crate) struct ConeTerm {
    pub mu: Vector3<f64>,
    pub s: Matrix3<f64>,
    pub b: f64,
    pub slack: usize,
    pub kappa: Kappa,
    pub has_cov: bool,
}

/// `sum_i alphas[i] * Phi(z[vars[i]]) - delta >= 0`.
#[derive(Debug, Clone)]
pub(crate) struct MassTerm {
    pub vars: Vec<usize>,
    pub alphas: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub linear: Vec<LinearTerm>,
    pub cones: Vec<ConeTerm>,
    pub masses: Vec<MassTerm>,
    pub v0: Vector3<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmResult {
    pub z: DVector<f64>,
    pub iterations: usize,
    pub kkt: f64,
    pub converged: bool,
}

/// Value, sparse gradient and dense local Hessian of one constraint.
struct Local {
    g: f64,
    idx: [usize; 5],
    grad: [f64; 5],
    hess: [[f64; 5]; 5],
    len: usize,
    curved: bool,
}

impl Local {
    fn empty() -> Self {
        Self { g: 0.0, idx: [0; 5], grad: [0.0; 5], hess: [[0.0; 5]; 5], len: 0, curved: false }
    }
}

impl Program {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    fn m(&self) -> usize {
        self.linear.len() + self.cones.len() + self.masses.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }

    fn v1(&self, z: &DVector<f64>) -> Vector3<f64> {
        self.v0 + Vector3::new(z[0], z[1], z[2]) * self.dt
    }

    fn cone_value(&self, c: &ConeTerm, z: &DVector<f64>, eps: f64) -> f64 {
        let v1 = self.v1(z);
        let kappa = match c.kappa {
            Kappa::Fixed(k) => k,
            Kappa::Var(i) => z[i],
        };
        let rho = if c.has_cov { ((c.s.transpose() * v1).norm_squared() + eps * eps).sqrt() } else { 0.0 };
        c.mu.dot(&v1) - c.b + z[c.slack] - kappa * rho
    }

    fn cone_local(&self, c: &ConeTerm, z: &DVector<f64>, eps: f64) -> Local {
        let v1 = self.v1(z);
        let dt = self.dt;
        let mut out = Local::empty();
        let (kappa, kvar) = match c.kappa {
            Kappa::Fixed(k) => (k, None),
            Kappa::Var(i) => (z[i], Some(i)),
        };
        out.idx[..4].copy_from_slice(&[0, 1, 2, c.slack]);
        out.len = 4;
        let mut grad_v = c.mu;
        let mut rho = 0.0;
        if c.has_cov {
            let w = c.s.transpose() * v1;
            rho = (w.norm_squared() + eps * eps).sqrt();
            let sw = c.s * w / rho;
            grad_v -= sw * kappa;
            // d2 rho / dv2 = S (I - w w^T / rho^2) S^T / rho
            let inner = (Matrix3::identity() - w * w.transpose() / (rho * rho)) / rho;
            let h = c.s * inner * c.s.transpose() * (-kappa * dt * dt);
            for a in 0..3 {
                for b in 0..3 {
                    out.hess[a][b] = h[(a, b)];
                }
            }
            if let Some(k) = kvar {
                out.idx[4] = k;
                out.len = 5;
                out.grad[4] = -rho;
                for a in 0..3 {
                    out.hess[a][4] = -dt * sw[a];
                    out.hess[4][a] = -dt * sw[a];
                }
            }
            out.curved = true;
        } else if let Some(k) = kvar {
            out.idx[4] = k;
            out.len = 5;
        }
        for a in 0..3 {
            out.grad[a] = dt * grad_v[a];
        }
        out.grad[3] = 1.0;
        out.g = c.mu.dot(&v1) - c.b + z[c.slack] - kappa * rho;
        out
    }

    fn mass_value(m: &MassTerm, z: &DVector<f64>) -> f64 {
        m.vars.iter().zip(&m.alphas).map(|(&i, a)| a * normal_cdf(z[i])).sum::<f64>() - m.delta
    }

    /// All constraint values; `None` once any is non-positive or non-finite.
    fn values(&self, z: &DVector<f64>, eps: f64, out: &mut Vec<f64>) -> bool {
        out.clear();
        for l in &self.linear {
            out.push(l.idx.iter().zip(&l.coef).map(|(&i, c)| c * z[i]).sum::<f64>() + l.rhs);
        }
        for c in &self.cones {
            out.push(self.cone_value(c, z, eps));
        }
        for m in &self.masses {
            out.push(Self::mass_value(m, z));
        }
        out.iter().all(|g| g.is_finite() && *g > 0.0)
    }
}

fn barrier_merit(prog: &Program, z: &DVector<f64>, g: &[f64], mu: f64) -> f64 {
    prog.objective(z) - mu * g.iter().map(|v| v.ln()).sum::<f64>()
}

pub(crate) fn solve(prog: &Program, z0: DVector<f64>, settings: &IpmSettings) -> IpmResult {
    let n = prog.n();
    let m = prog.m();
    let eps = settings.smoothing;
    let tol = settings.tol;
    let mu_min = tol / 10.0;
    let mut mu = settings.mu0;
    let mut z = z0;
    let mut g = Vec::with_capacity(m);
    if !prog.values(&z, eps, &mut g) {
        return IpmResult { z, iterations: 0, kkt: f64::INFINITY, converged: false };
    }
    let mut lambda: Vec<f64> = g.iter().map(|gj| mu / gj).collect();
    let mut g_trial = Vec::with_capacity(m);
    let mut locals: Vec<Local> = Vec::with_capacity(prog.cones.len() + prog.masses.len());
    let mut kkt = f64::INFINITY;
    let mut reg_last: f64 = 0.0;

    for iter in 0..settings.max_iters {
        // Nonlinear constraint derivatives at z.
        locals.clear();
        for c in &prog.cones {
            locals.push(prog.cone_local(c, &z, eps));
        }
        for ms in &prog.masses {
            let mut l = Local::empty();
            l.len = ms.vars.len().min(5);
            for (k, (&i, a)) in ms.vars.iter().zip(&ms.alphas).enumerate().take(5) {
                let x = z[i];
                l.idx[k] = i;
                l.grad[k] = a * normal_pdf(x);
                l.hess[k][k] = -a * x * normal_pdf(x);
            }
            l.g = Program::mass_value(ms, &z);
            l.curved = true;
            locals.push(l);
        }
        let nl = prog.linear.len();

        // Stationarity residual grad f - J^T lambda.
        let grad_f = &prog.p * &z + &prog.q;
        let mut r_d = grad_f.clone();
        for (j, l) in prog.linear.iter().enumerate() {
            for (&i, c) in l.idx.iter().zip(&l.coef) {
                r_d[i] -= lambda[j] * c;
            }
        }
        for (k, l) in locals.iter().enumerate() {
            for t in 0..l.len {
                r_d[l.idx[t]] -= lambda[nl + k] * l.grad[t];
            }
        }
        let lam_l1: f64 = lambda.iter().sum();
        let s_d = (lam_l1 / m.max(1) as f64).max(100.0) / 100.0;
        let stat = r_d.amax();
        let comp0 = g.iter().zip(&lambda).map(|(a, b)| a * b).fold(0.0, f64::max);
        kkt = (stat / s_d).max(comp0);
        if kkt <= tol {
            return IpmResult { z, iterations: iter, kkt, converged: true };
        }
        let mut comp_mu = g.iter().zip(&lambda).map(|(a, b)| (a * b - mu).abs()).fold(0.0, f64::max);
        while mu > mu_min && (stat / s_d).max(comp_mu) <= 10.0 * mu {
            mu = mu_min.max((0.2 * mu).min(mu.powf(1.5)));
            comp_mu = g.iter().zip(&lambda).map(|(a, b)| (a * b - mu).abs()).fold(0.0, f64::max);
        }

        // Condensed Newton system.
        let mut mat = prog.p.clone();
        let mut rhs = -grad_f;
        for (j, l) in prog.linear.iter().enumerate() {
            let w = lambda[j] / g[j];
            let s = mu / g[j];
            for (a, (&ia, ca)) in l.idx.iter().zip(&l.coef).enumerate() {
                rhs[ia] += s * ca;
                for (&ib, cb) in l.idx[..=a].iter().zip(&l.coef[..=a]) {
                    let v = w * ca * cb;
                    mat[(ia, ib)] += v;
                    if ia != ib {
                        mat[(ib, ia)] += v;
                    }
                }
            }
        }
        for (k, l) in locals.iter().enumerate() {
            let j = nl + k;
            let w = lambda[j] / g[j];
            let s = mu / g[j];
            for a in 0..l.len {
                rhs[l.idx[a]] += s * l.grad[a];
                for b in 0..l.len {
                    let mut v = w * l.grad[a] * l.grad[b];
                    if l.curved {
                        v -= lambda[j] * l.hess[a][b];
                    }
                    mat[(l.idx[a], l.idx[b])] += v;
                }
            }
        }
        let mut reg: f64 = 0.0;
        let chol = loop {
            let mut trial = mat.clone();
            if reg > 0.0 {
                for i in 0..n {
                    trial[(i, i)] += reg;
                }
            }
            if let Some(c) = trial.cholesky() {
                break Some(c);
            }
            reg = if reg == 0.0 {
                if reg_last == 0.0 {
                    1e-8
                } else {
                    (reg_last / 3.0).max(1e-10)
                }
            } else {
                reg * 8.0
            };
            if reg > 1e8 {
                break None;
            }
        };
        let Some(chol) = chol else {
            return IpmResult { z, iterations: iter, kkt, converged: false };
        };
        if reg > 0.0 {
            reg_last = reg;
        }
        let dz = chol.solve(&rhs);

        // Directional derivatives of each constraint.
        let mut jdz = vec![0.0; m];
        for (j, l) in prog.linear.iter().enumerate() {
            jdz[j] = l.idx.iter().zip(&l.coef).map(|(&i, c)| c * dz[i]).sum();
        }
        for (k, l) in locals.iter().enumerate() {
            jdz[nl + k] = (0..l.len).map(|t| l.grad[t] * dz[l.idx[t]]).sum();
        }
        let dlambda: Vec<f64> = (0..m).map(|j| mu / g[j] - lambda[j] - lambda[j] / g[j] * jdz[j]).collect();

        // Fraction to the boundary for affine constraints.
        let tau = (1.0 - mu).max(0.99);
        let mut alpha_p: f64 = 1.0;
        for j in 0..nl {
            if jdz[j] < 0.0 {
                alpha_p = alpha_p.min(-tau * g[j] / jdz[j]);
            }
        }
        let mut alpha_d: f64 = 1.0;
        for j in 0..m {
            if dlambda[j] < 0.0 {
                alpha_d = alpha_d.min(-tau * lambda[j] / dlambda[j]);
            }
        }

        // Backtracking on the barrier merit.
        let merit0 = barrier_merit(prog, &z, &g, mu);
        let grad_merit_dz: f64 = {
            let mut d = (&prog.p * &z + &prog.q).dot(&dz);
            for j in 0..m {
                d -= mu / g[j] * jdz[j];
            }
            d
        };
        let mut alpha = alpha_p;
        let mut accepted = false;
        let mut z_trial = z.clone();
        for _ in 0..60 {
            z_trial.copy_from(&z);
            z_trial.axpy(alpha, &dz, 1.0);
            if prog.values(&z_trial, eps, &mut g_trial)
                && g_trial.iter().zip(&g).skip(nl).all(|(gt, g0)| *gt >= (1.0 - tau) * g0)
            {
                let merit = barrier_merit(prog, &z_trial, &g_trial, mu);
                if merit <= merit0 + 1e-4 * alpha * grad_merit_dz.min(0.0) || (merit - merit0).abs() <= 1e-14 * merit0.abs().max(1.0)
                {
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                break;
            }
        }
        if !accepted {
            // A stalled step near the solution still counts when the
            // residual is small.
            return IpmResult { z, iterations: iter, kkt, converged: kkt <= 10.0 * tol };
        }
        std::mem::swap(&mut z, &mut z_trial);
        std::mem::swap(&mut g, &mut g_trial);
        for j in 0..m {
            let lj = lambda[j] + alpha_d * dlambda[j];
            let lo = mu / (1e10 * g[j]);
            let hi = 1e10 * mu / g[j];
            lambda[j] = lj.clamp(lo, hi);
        }
    }
    IpmResult { z, iterations: settings.max_iters, kkt, converged: kkt <= tol }
}
