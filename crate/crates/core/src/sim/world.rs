//! World state and the synchronous per-step planning pipeline.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chance::{gaussian_reformulate, gmm_reformulate, SocConstraint};
use crate::config::{Method, ScenarioConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flat::{inverse_map, PlantModel, PlantState, QuadrotorCommand};
use crate::mpc::{self, build_reference, ChanceConstraint, MpcProblem, SolveStatus};
use crate::orca::{compute_orca_plane, sample_orca_planes};
use crate::sim::baseline::bounding_volume_plane;
use crate::uncertainty::{
    estimate_plane_normal_distribution, GaussianSpec, GmmSampler, GmmSpec, NormalDistribution, NormalModel, SampleSet,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: usize,
    pub plant: PlantState,
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
    /// Distance flown until arrival (or until now).
    pub traveled: f64,
    pub arrival_time: Option<f64>,
    /// Path length credited at arrival: distance flown plus the remaining
    /// straight segment to the goal.
    pub arrival_path: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub time: f64,
    pub step: usize,
    pub agents: Vec<Agent>,
    rngs: Vec<ChaCha8Rng>,
}

/// Per-agent result of one planning round.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPlan {
    pub command: QuadrotorCommand,
    pub status: SolveStatus,
    pub solve_ms: f64,
    pub neighbors: usize,
    pub max_slack: f64,
    /// Tracking cost of the chosen plan.
    pub cost: f64,
    pub em_failures: usize,
}

/// Noise samplers shared by all agents of a trial.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pos: GmmSampler<3>,
    vel: GmmSampler<3>,
}

impl NoiseModel {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        Ok(Self { pos: GmmSampler::new(&cfg.noise.position_gmm())?, vel: GmmSampler::new(&cfg.noise.velocity_gmm())? })
    }
}

/// Start and goal of agent `k` on the antipodal circle.
pub fn circle_endpoints(cfg: &ScenarioConfig, k: usize) -> (Vector3<f64>, Vector3<f64>) {
    let theta = 2.0 * std::f64::consts::PI * k as f64 / cfg.agent_count as f64;
    let (s, c) = theta.sin_cos();
    let start = Vector3::new(cfg.circle_radius * c, cfg.circle_radius * s, cfg.altitude);
    let goal = Vector3::new(-cfg.circle_radius * c, -cfg.circle_radius * s, cfg.altitude);
    (start, goal)
}

impl World {
    /// Agents at rest on the circle; agent `k` draws from stream `k` of the
    /// trial seed.
    pub fn new(cfg: &ScenarioConfig, trial_seed: u64) -> Self {
        let agents = (0..cfg.agent_count)
            .map(|k| {
                let (start, goal) = circle_endpoints(cfg, k);
                Agent {
                    id: k,
                    plant: PlantState::at_rest(start, cfg.mass, cfg.gravity),
                    start,
                    goal,
                    traveled: 0.0,
                    arrival_time: None,
                    arrival_path: None,
                }
            })
            .collect();
        Self::from_agents(agents, trial_seed)
    }

    pub fn from_agents(agents: Vec<Agent>, trial_seed: u64) -> Self {
        let rngs = (0..agents.len())
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
                rng.set_stream(k as u64);
                rng
            })
            .collect();
        Self { time: 0.0, step: 0, agents, rngs }
    }

    pub fn all_arrived(&self) -> bool {
        self.agents.iter().all(|a| a.arrival_time.is_some())
    }

    /// Smallest true pairwise distance and every pair closer than `limit`.
    pub fn pair_distances(&self, limit: f64) -> (f64, Vec<(usize, usize, f64)>) {
        let mut min = f64::INFINITY;
        let mut close = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                let d = (a.plant.r - b.plant.r).norm();
                min = min.min(d);
                if d < limit {
                    close.push((a.id, b.id, d));
                }
            }
        }
        (min, close)
    }
}

struct Observation {
    pos: Vector3<f64>,
    vel: Vector3<f64>,
}

fn draw_set(center: &Vector3<f64>, sampler: &GmmSampler<3>, count: usize, rng: &mut ChaCha8Rng) -> Result<SampleSet<3>> {
    SampleSet::new((0..count).map(|_| center + sampler.draw(rng)).collect())
}

/// Builds the collision constraints for agent `i` and solves its MPC.
fn plan_agent(world: &World, cfg: &ScenarioConfig, noise: &NoiseModel, i: usize, rng: &mut ChaCha8Rng) -> Result<AgentPlan> {
    let me = &world.agents[i];
    let own_flat = me.plant.flat_state();

    // One noisy observation of every other agent, in id order.
    let mut observed: Vec<(usize, f64, Observation)> = Vec::new();
    for (j, other) in world.agents.iter().enumerate() {
        if j == i {
            continue;
        }
        let obs = Observation {
            pos: other.plant.r + noise.pos.draw(rng),
            vel: other.plant.v + noise.vel.draw(rng),
        };
        let d = (obs.pos - me.plant.r).norm();
        if d <= cfg.sensing_radius {
            observed.push((j, d, obs));
        }
    }
    observed.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    observed.truncate(cfg.neighbor_cap);

    let r = cfg.orca_radius;
    let own_pos = || SampleSet::new(vec![me.plant.r; cfg.samples]);
    let own_vel = || SampleSet::new(vec![me.plant.v; cfg.samples]);
    let mut constraints = Vec::with_capacity(observed.len());
    let mut em_failures = 0;
    for (j, _, obs) in &observed {
        let truth = &world.agents[*j].plant;
        let con = match cfg.method {
            Method::Deterministic => {
                let plane = compute_orca_plane(&me.plant.r, &me.plant.v, &obs.pos, &obs.vel, r, r, cfg.tau)?.plane;
                ChanceConstraint::Soc(SocConstraint::deterministic(&plane))
            }
            Method::BvExpansion => {
                let pos = draw_set(&truth.r, &noise.pos, cfg.samples, rng)?;
                let vel = draw_set(&truth.v, &noise.vel, cfg.samples, rng)?;
                let plane = bounding_volume_plane(&me.plant.r, &me.plant.v, &pos, &vel, cfg)?;
                ChanceConstraint::Soc(SocConstraint::deterministic(&plane))
            }
            Method::Gaussian | Method::GmmN2 | Method::GmmN3 => {
                let pos = draw_set(&truth.r, &noise.pos, cfg.samples, rng)?;
                let vel = draw_set(&truth.v, &noise.vel, cfg.samples, rng)?;
                let planes = sample_orca_planes(&own_pos()?, &own_vel()?, &pos, &vel, r, r, cfg.tau)?;
                let m = &planes.m_samples;
                match cfg.method.mixture_components() {
                    None => {
                        let g = GaussianSpec::new(m.mean(), m.covariance())?;
                        ChanceConstraint::Soc(gaussian_reformulate(&g.mean, &g.cov, planes.b_mean, cfg.delta)?)
                    }
                    Some(n) => {
                        let spec = match estimate_plane_normal_distribution(m, NormalModel::Gmm, n, &cfg.em) {
                            Ok(NormalDistribution::Mixture(g)) => g,
                            Ok(NormalDistribution::Gaussian(g)) => GmmSpec::single(g),
                            Err(Error::FitFailure(_)) => {
                                em_failures += 1;
                                GmmSpec::single(GaussianSpec::new(m.mean(), m.covariance())?)
                            }
                            Err(e) => return Err(e),
                        };
                        ChanceConstraint::Gmm(gmm_reformulate(&spec, planes.b_mean, cfg.delta)?)
                    }
                }
            }
        };
        constraints.push(con);
    }

    let reference = build_reference(&own_flat, &me.goal, cfg.v_cruise, cfg.horizon, cfg.dt)?;
    let problem = MpcProblem::new(own_flat, reference, cfg.dt, cfg.weights, cfg.v_max, cfg.a_max, constraints, cfg.solver.clone())?;
    let sol = mpc::solve(&problem)?;
    let command = inverse_map(&sol.inputs[0], me.plant.attitude.z, cfg.mass, cfg.gravity)?;
    Ok(AgentPlan {
        command,
        status: sol.status,
        solve_ms: sol.solve_time,
        neighbors: observed.len(),
        max_slack: sol.max_slack,
        cost: sol.cost,
        em_failures,
    })
}

/// Plans every agent against the same snapshot, then commits all plant
/// updates in id order.
pub fn step_world(world: &mut World, cfg: &ScenarioConfig, noise: &NoiseModel, exec: Exec) -> Result<Vec<AgentPlan>> {
    let snapshot: &World = world;
    let results = exec.map_range(snapshot.agents.len(), |i| {
        let mut rng = snapshot.rngs[i].clone();
        plan_agent(snapshot, cfg, noise, i, &mut rng).map(|p| (p, rng))
    });
    let mut plans = Vec::with_capacity(results.len());
    let mut rngs = Vec::with_capacity(results.len());
    for r in results {
        let (p, rng) = r?;
        plans.push(p);
        rngs.push(rng);
    }
    world.rngs = rngs;

    let model = PlantModel { tau_att: cfg.tau_att, substeps: cfg.substeps };
    let t_next = (world.step + 1) as f64 * cfg.dt;
    for (agent, plan) in world.agents.iter_mut().zip(&plans) {
        let next = model.advance(&agent.plant, &plan.command, cfg.dt)?;
        if agent.arrival_time.is_none() {
            agent.traveled += (next.r - agent.plant.r).norm();
            let remaining = (agent.goal - next.r).norm();
            if remaining <= cfg.goal_tolerance {
                agent.arrival_time = Some(t_next);
                agent.arrival_path = Some(agent.traveled + remaining);
            }
        }
        agent.plant = next;
    }
    world.step += 1;
    world.time = t_next;
    Ok(plans)
}
