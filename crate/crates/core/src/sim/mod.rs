//! Seeded antipodal-swap simulator: trials, batches and their metrics.

pub mod baseline;
pub mod world;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::exec::Exec;
use crate::mpc::SolveStatus;
pub use world::{circle_endpoints, step_world, Agent, AgentPlan, NoiseModel, World};

/// Histogram of per-trial minimum distances: bin width and upper edge.
pub const HIST_BIN: f64 = 0.05;
pub const HIST_MAX: f64 = 1.5;

/// Trial `k` of a batch: a splitmix64 draw at counter `k` from the master
/// seed, so any trial can be rerun on its own.
pub fn trial_seed(master: u64, k: u64) -> u64 {
    let mut z = master.wrapping_add((k.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub pair: (usize, usize),
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub agent: usize,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub status: SolveStatus,
    pub neighbors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub seed: u64,
    pub collided: bool,
    pub collision_events: Vec<CollisionEvent>,
    pub path_length: Vec<f64>,
    pub time_to_goal: Vec<Option<f64>>,
    /// Infinite for a single agent.
    pub min_interagent_distance: f64,
    pub infeasible_steps: usize,
    pub fallback_steps: usize,
    pub em_failures: usize,
    pub steps: usize,
    /// Wall-clock statistics; excluded from the deterministic CSV outputs.
    pub mean_solve_time: f64,
    #[serde(skip)]
    pub solve_times: Vec<(usize, f64)>,
}

impl TrialMetrics {
    pub fn all_reached(&self) -> bool {
        self.time_to_goal.iter().all(Option::is_some)
    }
}

/// Runs one trial to completion (all agents home or the time limit).
pub fn run_trial(cfg: &ScenarioConfig, seed: u64) -> Result<TrialMetrics> {
    run_trial_with(cfg, seed, Exec::Sequential, None)
}

/// As [`run_trial`], optionally collecting per-step trace records.
pub fn run_trial_with(
    cfg: &ScenarioConfig,
    seed: u64,
    exec: Exec,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<TrialMetrics> {
    cfg.validate()?;
    let noise = NoiseModel::new(cfg)?;
    let mut world = World::new(cfg, seed);
    let limit = cfg.collision_distance();
    let (mut min_dist, initial) = world.pair_distances(limit);
    let mut in_contact: Vec<(usize, usize)> = initial.iter().map(|c| (c.0, c.1)).collect();
    let mut events: Vec<CollisionEvent> =
        initial.iter().map(|&(i, j, d)| CollisionEvent { time: 0.0, pair: (i, j), distance: d }).collect();
    let max_steps = (cfg.trial_duration / cfg.dt - 1e-9).ceil() as usize;
    let (mut infeasible, mut fallback, mut em_failures) = (0, 0, 0);
    let mut solve_times = Vec::new();

    while world.step < max_steps && !world.all_arrived() {
        let plans = step_world(&mut world, cfg, &noise, exec)?;
        for (agent, plan) in world.agents.iter().zip(&plans) {
            match plan.status {
                SolveStatus::Infeasible => infeasible += 1,
                SolveStatus::Fallback => fallback += 1,
                SolveStatus::Optimal => {}
            }
            em_failures += plan.em_failures;
            solve_times.push((plan.neighbors, plan.solve_ms));
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceRecord {
                    time: world.time,
                    agent: agent.id,
                    position: agent.plant.r.into(),
                    velocity: agent.plant.v.into(),
                    status: plan.status,
                    neighbors: plan.neighbors,
                });
            }
        }
        let (m, close) = world.pair_distances(limit);
        min_dist = min_dist.min(m);
        // One event per contact episode.
        for &(i, j, d) in &close {
            if !in_contact.contains(&(i, j)) {
                events.push(CollisionEvent { time: world.time, pair: (i, j), distance: d });
            }
        }
        in_contact = close.iter().map(|c| (c.0, c.1)).collect();
    }

    let path_length = world.agents.iter().map(|a| a.arrival_path.unwrap_or(a.traveled)).collect();
    let time_to_goal = world.agents.iter().map(|a| a.arrival_time).collect();
    let mean_solve_time =
        if solve_times.is_empty() { 0.0 } else { solve_times.iter().map(|s| s.1).sum::<f64>() / solve_times.len() as f64 };
    Ok(TrialMetrics {
        seed,
        collided: !events.is_empty(),
        collision_events: events,
        path_length,
        time_to_goal,
        min_interagent_distance: min_dist,
        infeasible_steps: infeasible,
        fallback_steps: fallback,
        em_failures,
        steps: world.step,
        mean_solve_time,
        solve_times,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub trials: usize,
    pub collision_trials: usize,
    /// Over goal-reaching agents of collision-free trials.
    pub mean_path_length: Option<f64>,
    /// Over goal-reaching agents of all trials.
    pub mean_time_to_goal: Option<f64>,
    /// Trials whose minimum distance fell below the safe distance.
    pub unsafe_trials: usize,
    pub timeout_trials: usize,
    pub infeasible_steps: usize,
    pub fallback_steps: usize,
    pub em_failures: usize,
    /// Left edges of the minimum-distance histogram bins.
    pub histogram_bins: Vec<f64>,
    pub histogram_counts: Vec<usize>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates per-trial metrics.
pub fn summarize(trials: &[TrialMetrics], safe_distance: f64) -> BatchSummary {
    let bins = (HIST_MAX / HIST_BIN).round() as usize;
    let mut counts = vec![0; bins];
    for t in trials {
        let d = t.min_interagent_distance;
        if d < HIST_MAX {
            // Decimal edges are not exact in binary; a value on an edge opens the upper bin.
            counts[((d / HIST_BIN + 1e-9).floor() as usize).min(bins - 1)] += 1;
        }
    }
    let free = || trials.iter().filter(|t| !t.collided);
    BatchSummary {
        trials: trials.len(),
        collision_trials: trials.iter().filter(|t| t.collided).count(),
        mean_path_length: mean(free().flat_map(|t| {
            t.path_length.iter().zip(&t.time_to_goal).filter(|(_, g)| g.is_some()).map(|(p, _)| *p)
        })),
        mean_time_to_goal: mean(trials.iter().flat_map(|t| t.time_to_goal.iter().flatten().copied())),
        unsafe_trials: trials.iter().filter(|t| t.min_interagent_distance < safe_distance).count(),
        timeout_trials: trials.iter().filter(|t| !t.all_reached()).count(),
        infeasible_steps: trials.iter().map(|t| t.infeasible_steps).sum(),
        fallback_steps: trials.iter().map(|t| t.fallback_steps).sum(),
        em_failures: trials.iter().map(|t| t.em_failures).sum(),
        histogram_bins: (0..bins).map(|k| k as f64 * HIST_BIN).collect(),
        histogram_counts: counts,
    }
}

/// Runs `trials` seeded trials, returning per-trial metrics in trial order.
pub fn run_trials(cfg: &ScenarioConfig, trials: usize, exec: Exec) -> Result<Vec<TrialMetrics>> {
    cfg.validate()?;
    exec.map_range(trials, |k| run_trial(cfg, trial_seed(cfg.seed, k as u64))).into_iter().collect()
}

pub fn run_batch(cfg: &ScenarioConfig, trials: usize) -> Result<BatchSummary> {
    if trials == 0 {
        return Err(crate::Error::InvalidArgument("at least one trial is required".into()));
    }
    let metrics = run_trials(cfg, trials, Exec::best_available())?;
    Ok(summarize(&metrics, cfg.safe_distance))
}

/// Median of the wall-clock solve times.
pub fn median_solve_time(trials: &[TrialMetrics]) -> Option<f64> {
    let mut all: Vec<f64> = trials.iter().flat_map(|t| t.solve_times.iter().map(|s| s.1)).collect();
    if all.is_empty() {
        return None;
    }
    all.sort_by(f64::total_cmp);
    Some(all[all.len() / 2])
}

#[cfg(test)]
mod tests;
