use super::*;
use crate::chance::{gaussian_reformulate, gmm_reformulate};
use crate::uncertainty::{GaussianSpec, GmmSpec};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 0.1;
const N: usize = 8;
const V_CRUISE: f64 = 40.0 / 30.0;

fn problem(x0: FlatState, goal: Vector3<f64>, constraints: Vec<ChanceConstraint>) -> MpcProblem {
    problem_with(x0, goal, constraints, 2.0, 3.0, N)
}

fn problem_with(x0: FlatState, goal: Vector3<f64>, constraints: Vec<ChanceConstraint>, v_max: f64, a_max: f64, n: usize) -> MpcProblem {
    let reference = build_reference(&x0, &goal, V_CRUISE, n, DT).unwrap();
    MpcProblem::new(x0, reference, DT, MpcWeights::default(), v_max, a_max, constraints, SolverSettings::default()).unwrap()
}

fn cruising() -> FlatState {
    FlatState::new(Vector3::zeros(), Vector3::new(V_CRUISE, 0.0, 0.0), 0.0)
}

fn goal() -> Vector3<f64> {
    Vector3::new(40.0, 0.0, 0.0)
}

/// A plane that the cruising velocity violates, pushing toward +y.
fn blocking_soc(delta: f64, var: f64) -> SocConstraint {
    let mu = Vector3::new(-0.8, 0.6, 0.0);
    gaussian_reformulate(&mu, &(Matrix3::identity() * var), -0.95, delta).unwrap()
}

fn asymmetric_mixture(delta: f64) -> GmmChanceConstraint {
    let low = GaussianSpec::new(Vector3::new(-0.8, 0.6, 0.0), Matrix3::identity() * 0.002).unwrap();
    let high = GaussianSpec::new(Vector3::new(-0.6, 0.8, 0.0), Matrix3::identity() * 0.08).unwrap();
    gmm_reformulate(&GmmSpec::new(vec![low, high], vec![0.5, 0.5]).unwrap(), -0.95, delta).unwrap()
}

fn v1(sol: &MpcSolution) -> Vector3<f64> {
    sol.predicted[1].v
}

#[test]
fn reference_at_goal_is_stationary() {
    let x = FlatState::at_rest(Vector3::new(1.0, 2.0, 3.0));
    let r = build_reference(&x, &x.r, V_CRUISE, N, DT).unwrap();
    assert_eq!(r.len(), N + 1);
    assert!(r.iter().all(|s| s.r == x.r && s.v == Vector3::zeros() && s.psi == 0.0));
    assert!(build_reference(&x, &x.r, 0.0, N, DT).is_err());
}

#[test]
fn reference_crosses_forty_metres_in_thirty_seconds() {
    let start = FlatState::at_rest(Vector3::new(20.0, 0.0, 2.0));
    let g = Vector3::new(-20.0, 0.0, 2.0);
    let r = build_reference(&start, &g, V_CRUISE, 400, DT).unwrap();
    let arrival = r.iter().position(|s| (s.r - g).norm() < 1e-9).unwrap() as f64 * DT;
    assert!((arrival - 30.0).abs() <= DT + 1e-9, "{arrival}");
}

#[test]
fn reference_is_collinear() {
    let start = FlatState::at_rest(Vector3::new(1.0, -2.0, 2.0));
    let g = Vector3::new(-7.0, 5.0, 2.5);
    let dir = (g - start.r).normalize();
    for s in build_reference(&start, &g, 3.0, 50, DT).unwrap() {
        assert!((s.r - start.r).cross(&dir).norm() < 1e-9);
    }
}

#[test]
fn unconstrained_tracking_is_exact() {
    let p = problem(cruising(), goal(), vec![]);
    let sol = solve_gaussian(&p).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.cost <= 1e-8, "{}", sol.cost);
    for (k, x) in sol.predicted.iter().enumerate() {
        assert!((x.v - p.reference[k].v).norm() < 1e-6);
    }
    assert!(sol.kkt_residual <= 1e-6);
}

#[test]
fn condensed_cost_matches_rollout() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = FlatState::new(Vector3::new(0.3, -0.2, 2.0), Vector3::new(0.5, 0.1, -0.1), 0.2);
    let p = problem(x0, Vector3::new(5.0, 4.0, 2.0), vec![]);
    let cond = condense(&p);
    for _ in 0..20 {
        let u: Vec<f64> = (0..4 * N).map(|_| rng.random_range(-2.0..2.0)).collect();
        let inputs: Vec<FlatInput> =
            u.chunks(4).map(|c| FlatInput::new(Vector3::new(c[0], c[1], c[2]), c[3])).collect();
        let uv = DVector::from_vec(u);
        let condensed = 0.5 * uv.dot(&(&cond.p * &uv)) + cond.q.dot(&uv) + cond.c;
        let direct = p.tracking_cost(&inputs).unwrap();
        assert!((condensed - direct).abs() < 1e-9 * direct.max(1.0));
    }
}

/// Exact quadratic model of the explicit rollout cost by finite differences
/// with unit steps.
fn quadratic_model(p: &MpcProblem) -> (f64, DVector<f64>, DMatrix<f64>) {
    let nu = 4 * p.horizon;
    let cost = |u: &DVector<f64>| {
        let inputs: Vec<FlatInput> =
            (0..p.horizon).map(|k| FlatInput::new(Vector3::new(u[4 * k], u[4 * k + 1], u[4 * k + 2]), u[4 * k + 3])).collect();
        p.tracking_cost(&inputs).unwrap()
    };
    let zero = DVector::zeros(nu);
    let j0 = cost(&zero);
    let unit = |i: usize| {
        let mut e = DVector::zeros(nu);
        e[i] = 1.0;
        e
    };
    let single: Vec<f64> = (0..nu).map(|i| cost(&unit(i))).collect();
    let g = DVector::from_fn(nu, |i, _| (single[i] - cost(&(-unit(i)))) / 2.0);
    let h = DMatrix::from_fn(nu, nu, |i, j| cost(&(unit(i) + unit(j))) - single[i] - single[j] + j0);
    (j0, g, h)
}

#[test]
fn head_on_cone_beats_velocity_grid() {
    let soc = blocking_soc(0.9, 0.02);
    let a_max = 3.0;
    // A loose velocity box keeps later steps unconstrained.
    let p = problem_with(cruising(), goal(), vec![ChanceConstraint::Soc(soc)], 10.0, a_max, N);
    let sol = solve_gaussian(&p).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(soc.margin(&v1(&sol)) >= -1e-6);
    assert!((soc.margin(&v1(&sol))).abs() < 1e-5, "constraint should be active");

    // Minimizing out the tail for a fixed first input gives the exact cost
    // as a function of a0 (tail boxes dropped, so this is a lower bound).
    let (j0, g, h) = quadratic_model(&p);
    let nu = 4 * N;
    let h_rr = h.view((3, 3), (nu - 3, nu - 3)).into_owned();
    let h_ra = h.view((3, 0), (nu - 3, 3)).into_owned();
    let h_aa = h.view((0, 0), (3, 3)).into_owned();
    let g_a = g.rows(0, 3).into_owned();
    let g_r = g.rows(3, nu - 3).into_owned();
    let chol = h_rr.cholesky().unwrap();
    let k_mat = chol.solve(&h_ra);
    let k_vec = chol.solve(&g_r);
    let reduced = |a0: &DVector<f64>| {
        let t = &g_r + &h_ra * a0;
        j0 + g_a.dot(a0) + 0.5 * a0.dot(&(&h_aa * a0)) - 0.5 * t.dot(&(&k_vec + &k_mat * a0))
    };
    let steps = 50;
    let mut best = f64::INFINITY;
    for i in 0..steps {
        for j in 0..steps {
            for k in 0..steps {
                let at = |t: usize| -a_max + 2.0 * a_max * t as f64 / (steps - 1) as f64;
                let a0 = DVector::from_vec(vec![at(i), at(j), at(k)]);
                let v = p.x0.v + Vector3::new(a0[0], a0[1], a0[2]) * DT;
                if soc.satisfied(&v) {
                    best = best.min(reduced(&a0));
                }
            }
        }
    }
    assert!(best.is_finite());
    assert!(sol.cost - best <= 1e-4, "solver {} grid {}", sol.cost, best);
}

#[test]
fn median_level_without_noise_is_deterministic() {
    let mu = Vector3::new(-0.8, 0.6, 0.0);
    let chance = gaussian_reformulate(&mu, &Matrix3::zeros(), -0.7, 0.5).unwrap();
    let det = SocConstraint::deterministic(&crate::orca::OrcaPlane { m: mu, b: -0.7 });
    let a = solve_gaussian(&problem(cruising(), goal(), vec![ChanceConstraint::Soc(chance)])).unwrap();
    let b = solve_gaussian(&problem(cruising(), goal(), vec![ChanceConstraint::Soc(det)])).unwrap();
    for (x, y) in a.inputs.iter().zip(&b.inputs) {
        assert!((x.a - y.a).norm() < 1e-6);
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng) -> GaussianSpec<3> {
    let dir = Vector3::new(rng.random_range(-1.0..-0.3), rng.random_range(-0.6..0.6), rng.random_range(-0.2..0.2)).normalize();
    let a = Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
    GaussianSpec::new(dir, a * a.transpose() + Matrix3::identity() * 0.002).unwrap()
}

/// Offset for which some first velocity reachable from the cruising state
/// satisfies every component at level `delta`.
fn reachable_offset(comps: &[GaussianSpec<3>], delta: f64, rng: &mut ChaCha8Rng) -> f64 {
    let a = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
    let v = cruising().v + a * DT;
    let kappa = quantile(delta).unwrap();
    comps.iter().map(|c| c.mean.dot(&v) - kappa * v.dot(&(c.cov * v)).sqrt()).fold(f64::INFINITY, f64::min) - 0.01
}

#[test]
fn single_component_mixture_matches_gaussian_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let spec = random_gaussian(&mut rng);
        let delta = [0.75, 0.9][rng.random_range(0..2)];
        let b = reachable_offset(std::slice::from_ref(&spec), delta, &mut rng);
        let soc = gaussian_reformulate(&spec.mean, &spec.cov, b, delta).unwrap();
        let gmm = gmm_reformulate(&GmmSpec::single(spec), b, delta).unwrap();
        let g = solve_gaussian(&problem(cruising(), goal(), vec![ChanceConstraint::Soc(soc)])).unwrap();
        let m = solve_gmm(&problem(cruising(), goal(), vec![ChanceConstraint::Gmm(gmm)])).unwrap();
        assert_eq!(g.status, SolveStatus::Optimal);
        assert_eq!(m.status, SolveStatus::Optimal);
        assert!((g.cost - m.cost).abs() <= 1e-5, "{} vs {}", g.cost, m.cost);
        assert!(m.etas[0][0] >= delta - 1e-6);
    }
}

#[test]
fn mirrored_mixture_splits_levels_evenly() {
    // Mirror image under y -> -y with a symmetric reference.
    let a = GaussianSpec::new(Vector3::new(-0.9, 0.3, 0.0), Matrix3::identity() * 0.02).unwrap();
    let b = GaussianSpec::new(Vector3::new(-0.9, -0.3, 0.0), Matrix3::identity() * 0.02).unwrap();
    let gmm = gmm_reformulate(&GmmSpec::new(vec![a, b], vec![0.5, 0.5]).unwrap(), -1.2, 0.9).unwrap();
    let sol = solve_gmm(&problem(cruising(), goal(), vec![ChanceConstraint::Gmm(gmm.clone())])).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.etas[0][0] - sol.etas[0][1]).abs() < 1e-3, "{:?}", sol.etas);
    assert!(gmm.feasible(&v1(&sol), &sol.etas[0], 1e-6));
}

fn fixed_cost(p: &MpcProblem, etas: &[f64]) -> Option<f64> {
    let sol = solve_gmm_fixed(p, &[etas.to_vec()]).ok()?;
    (sol.status == SolveStatus::Optimal).then_some(sol.cost)
}

#[test]
fn joint_levels_beat_fixed_level_sweep() {
    let gmm = asymmetric_mixture(0.9);
    let p = problem(cruising(), goal(), vec![ChanceConstraint::Gmm(gmm.clone())]);
    let sol = solve_gmm(&p).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(gmm.feasible(&v1(&sol), &sol.etas[0], 1e-6));
    assert!(gmm.allocation_margin(&sol.etas[0]) >= -1e-6);

    let heuristic = fixed_cost(&p, &[0.9, 0.9]).unwrap();
    assert!(sol.cost <= heuristic + 1e-6);
    // Sweep eta_1 with eta_2 chosen to make the allocation tight.
    let mut sweep_best = f64::INFINITY;
    for i in 0..20 {
        let e1 = 0.81 + 0.18 * i as f64 / 19.0;
        let e2 = (2.0 * 0.9 - e1).clamp(ETA_MIN, ETA_MAX);
        if let Some(c) = fixed_cost(&p, &[e1, e2]) {
            sweep_best = sweep_best.min(c);
        }
    }
    assert!(sweep_best < heuristic, "sweep should find a cheaper allocation");
    assert!(sol.cost <= sweep_best + 1e-4, "joint {} sweep {}", sol.cost, sweep_best);
}

#[test]
fn levels_shift_toward_low_variance_component() {
    let gmm = asymmetric_mixture(0.9);
    let p = problem(cruising(), goal(), vec![ChanceConstraint::Gmm(gmm.clone())]);
    let sol = solve_gmm(&p).unwrap();
    let steps = 100;
    let grid = |t: usize| ETA_MIN + (ETA_MAX - ETA_MIN) * t as f64 / (steps - 1) as f64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..steps {
        for j in 0..steps {
            let etas = [grid(i), grid(j)];
            if gmm.allocation_margin(&etas) < 0.0 {
                continue;
            }
            if let Some(c) = fixed_cost(&p, &etas) {
                if c < best.0 {
                    best = (c, etas[0], etas[1]);
                }
            }
        }
    }
    assert!(best.1 > best.2, "grid optimum {best:?}");
    assert!(sol.etas[0][0] > sol.etas[0][1], "{:?}", sol.etas);
    assert!(sol.cost <= best.0 + 1e-4, "joint {} grid {}", sol.cost, best.0);
}

#[test]
fn raising_delta_never_lowers_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let spec = random_gaussian(&mut rng);
        let b = reachable_offset(std::slice::from_ref(&spec), 0.9, &mut rng);
        let mut last = 0.0;
        for delta in [0.5, 0.75, 0.9] {
            let soc = gaussian_reformulate(&spec.mean, &spec.cov, b, delta).unwrap();
            let sol = solve_gaussian(&problem(cruising(), goal(), vec![ChanceConstraint::Soc(soc)])).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            assert!(sol.cost >= last - 1e-7, "delta {delta}: {} < {last}", sol.cost);
            last = sol.cost;
        }
    }
}

#[test]
fn plans_are_dynamically_feasible_and_within_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x0 = FlatState::new(
            Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5)),
            rng.random_range(-0.5..0.5),
        );
        let cons: Vec<ChanceConstraint> = (0..3)
            .map(|_| {
                let s = random_gaussian(&mut rng);
                ChanceConstraint::Soc(gaussian_reformulate(&s.mean, &s.cov, rng.random_range(-2.0..-1.0), 0.9).unwrap())
            })
            .collect();
        let p = problem(x0, Vector3::new(10.0, 3.0, 0.0), cons);
        let sol = solve_gaussian(&p).unwrap();
        for (k, u) in sol.inputs.iter().enumerate() {
            let next = p.a_d * sol.predicted[k].to_vector() + p.b_d * u.to_vector();
            assert!((next - sol.predicted[k + 1].to_vector()).amax() < 1e-9);
        }
        if sol.status == SolveStatus::Optimal {
            for (x, u) in sol.predicted.iter().skip(1).zip(&sol.inputs) {
                assert!(x.v.amax() <= p.v_max + 1e-6);
                assert!(u.a.amax() <= p.a_max + 1e-6);
                assert!(u.psi_rate.abs() <= 1.0 + 1e-6);
            }
            for c in &p.constraints {
                let ChanceConstraint::Soc(s) = c else { unreachable!() };
                assert!(s.margin(&v1(&sol)) >= -1e-6);
            }
        }
    }
}

#[test]
fn receding_horizon_is_consistent() {
    // Saturating start; a long horizon makes the truncation effect negligible.
    let start = FlatState::at_rest(Vector3::zeros());
    let target = Vector3::new(3.0, 1.0, 0.0);
    let n = 60;
    let make = |x0: FlatState| {
        let reference = vec![FlatState::at_rest(target); n + 1];
        MpcProblem::new(x0, reference, DT, MpcWeights::default(), 2.0, 1.0, vec![], SolverSettings::default()).unwrap()
    };
    let first = solve_gaussian(&make(start)).unwrap();
    assert_eq!(first.status, SolveStatus::Optimal);
    let second = solve_gaussian(&make(first.predicted[1])).unwrap();
    assert_eq!(second.status, SolveStatus::Optimal);
    assert!((first.inputs[1].a - second.inputs[0].a).amax() < 1e-5, "{} vs {}", first.inputs[1].a, second.inputs[0].a);
}

#[test]
fn impossible_plane_reports_slack() {
    // Requires v_x >= 3 from rest with a 3 m/s^2 limit over 0.1 s.
    let det = SocConstraint::deterministic(&crate::orca::OrcaPlane { m: Vector3::x(), b: 3.0 });
    let p = problem(FlatState::at_rest(Vector3::zeros()), goal(), vec![ChanceConstraint::Soc(det)]);
    let sol = solve_gaussian(&p).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!((sol.max_slack - 2.7).abs() < 1e-4, "{}", sol.max_slack);
    assert!((sol.inputs[0].a.x - 3.0).abs() < 1e-4);
}

#[test]
fn excess_speed_is_shed_within_limits() {
    let fast = FlatState::new(Vector3::zeros(), Vector3::new(2.2, 0.0, 0.0), 0.0);
    let sol = solve_gaussian(&problem(fast, goal(), vec![])).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.predicted[1].v.x <= 2.0 + 1e-6);
    let too_fast = FlatState::new(Vector3::zeros(), Vector3::new(3.0, 0.0, 0.0), 0.0);
    let sol = solve_gaussian(&problem(too_fast, goal(), vec![])).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!((sol.max_slack - 0.7).abs() < 1e-4);
}

#[test]
fn gmm_solution_satisfies_every_component() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in [2, 3] {
        for _ in 0..10 {
            let comps: Vec<_> = (0..n).map(|_| random_gaussian(&mut rng)).collect();
            let mut alphas: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = alphas.iter().sum();
            alphas.iter_mut().for_each(|a| *a /= s);
            let b = reachable_offset(&comps, 0.9, &mut rng);
            let gmm = gmm_reformulate(&GmmSpec::new(comps, alphas).unwrap(), b, 0.9).unwrap();
            let sol = solve_gmm(&problem(cruising(), goal(), vec![ChanceConstraint::Gmm(gmm.clone())])).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            assert!(sol.eta_init.is_some());
            assert!(gmm.feasible(&v1(&sol), &sol.etas[0], 1e-6));
            assert!(gmm.satisfaction_probability(&v1(&sol)) >= 0.9 - 1e-6);
        }
    }
}
