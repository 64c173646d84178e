use nalgebra::Vector3;
use swarmcco::config::{Method, NoisePreset, ScenarioConfig};
use swarmcco::exec::Exec;
use swarmcco::flat::PlantState;
use swarmcco::sim::{run_batch, run_trials, step_world, summarize, trial_seed, Agent, NoiseModel, World, HIST_MAX};

fn cfg(method: Method, agents: usize, noise: NoisePreset) -> ScenarioConfig {
    ScenarioConfig { agent_count: agents, method, noise, ..ScenarioConfig::default() }
}

#[test]
fn metrics_are_self_consistent() {
    let c = cfg(Method::Deterministic, 6, NoisePreset::Sigma1);
    let trials = run_trials(&c, 6, Exec::best_available()).unwrap();
    for t in &trials {
        assert_eq!(t.collided, !t.collision_events.is_empty());
        assert_eq!(t.collided, t.min_interagent_distance < 2.0 * c.agent_radius);
        assert!(t.min_interagent_distance >= 0.0);
        for (path, time) in t.path_length.iter().zip(&t.time_to_goal) {
            if time.is_some() {
                assert!(*path >= 2.0 * c.circle_radius - 1e-6, "path {path}");
            }
        }
    }
    let s = summarize(&trials, c.safe_distance);
    let near = trials.iter().filter(|t| t.min_interagent_distance < HIST_MAX).count();
    assert_eq!(s.histogram_counts.iter().sum::<usize>(), near);
    assert!(s.collision_trials <= s.trials);
    assert_eq!(s.collision_trials, trials.iter().filter(|t| t.collided).count());
}

#[test]
fn empty_batch_is_rejected() {
    assert!(run_batch(&ScenarioConfig::default(), 0).is_err());
}

/// Largest lateral and vertical deviation from the start-goal lines of two
/// agents flying parallel tracks outside each other's sensing range.
fn parallel_track_errors(c: &ScenarioConfig) -> (f64, f64) {
    let make = |id, y: f64| {
        let start = Vector3::new(-15.0, y, c.altitude);
        Agent {
            id,
            plant: PlantState::at_rest(start, c.mass, c.gravity),
            start,
            goal: Vector3::new(15.0, y, c.altitude),
            traveled: 0.0,
            arrival_time: None,
            arrival_path: None,
        }
    };
    let mut world = World::from_agents(vec![make(0, -10.0), make(1, 10.0)], 5);
    let noise = NoiseModel::new(c).unwrap();
    let (mut lateral, mut vertical): (f64, f64) = (0.0, 0.0);
    while !world.all_arrived() && world.step < 400 {
        step_world(&mut world, c, &noise, Exec::Sequential).unwrap();
        for a in &world.agents {
            lateral = lateral.max((a.plant.r.y - a.start.y).abs());
            vertical = vertical.max((a.plant.r.z - a.start.z).abs());
        }
    }
    assert!(world.all_arrived());
    (lateral, vertical)
}

#[test]
fn distant_agents_track_their_lines() {
    let ideal = ScenarioConfig { tau_att: 0.0, ..cfg(Method::Deterministic, 2, NoisePreset::None) };
    let (lateral, vertical) = parallel_track_errors(&ideal);
    assert!(lateral < 1e-3 && vertical < 1e-3, "{lateral} {vertical}");

    // Attitude lag costs some altitude while the thrust tilts at take-off.
    let lagged = cfg(Method::Deterministic, 2, NoisePreset::None);
    let (lateral, vertical) = parallel_track_errors(&lagged);
    assert!(lateral < 1e-3, "{lateral}");
    assert!(vertical < 0.02, "{vertical}");
}

#[test]
fn bounding_volumes_go_infeasible_in_crowds() {
    let c = cfg(Method::BvExpansion, 8, NoisePreset::Sigma2);
    let trials = run_trials(&c, 3, Exec::best_available()).unwrap();
    assert!(trials.iter().any(|t| t.infeasible_steps > 0));
}

#[test]
fn larger_inflation_keeps_more_distance() {
    // Paired seeds; compared over the trials that stay collision-free at
    // every inflation level.
    let levels = [0.5, 1.96, 3.0];
    let seeds: Vec<u64> = (0..4).map(|k| trial_seed(3, k)).collect();
    let mut per_level = Vec::new();
    for k_bv in levels {
        let c = ScenarioConfig { k_bv, ..cfg(Method::BvExpansion, 4, NoisePreset::Sigma1) };
        per_level.push(seeds.iter().map(|&s| swarmcco::sim::run_trial(&c, s).unwrap()).collect::<Vec<_>>());
    }
    let mut compared = 0;
    for i in 0..seeds.len() {
        if per_level.iter().any(|l| l[i].collided) {
            continue;
        }
        compared += 1;
        for w in per_level.windows(2) {
            let (lo, hi) = (w[0][i].min_interagent_distance, w[1][i].min_interagent_distance);
            assert!(hi >= lo - 1e-9, "seed {}: {hi} < {lo}", seeds[i]);
        }
    }
    assert!(compared > 0);
}
