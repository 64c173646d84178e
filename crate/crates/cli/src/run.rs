use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde_json::{json, Value};
use swarmcco::config::{parse_config, ScenarioConfig};
use swarmcco::exec::Exec;
use swarmcco::report::{self, TraceWriter, SUMMARY_JSON, TRACE_CSV};
use swarmcco::sim::{median_solve_time, run_trial_with, summarize, trial_seed, TraceRecord, TrialMetrics};
use swarmcco::Error;

use crate::RunArgs;

pub const MANIFEST_JSON: &str = "manifest.json";
const BUILD_TAG: &str = env!("SWARMCCO_BUILD_TAG");

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

/// Scenario file (or defaults) with command-line overrides applied.
fn resolve_config(args: &RunArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &args.scenario {
        Some(path) => parse_config(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(n) = args.agents {
        cfg.agent_count = n;
    }
    if let Some(n) = args.noise {
        cfg.noise = n;
    }
    if let Some(d) = args.delta {
        cfg.delta = d;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path) -> Result<(), Failure> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir).map_err(|e| Failure::Runtime(e.to_string()))?.next().is_some();
        if occupied {
            return Err(Failure::Config(format!("output directory {} already exists and is not empty", dir.display())));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

struct Manifest {
    path: PathBuf,
    body: Value,
}

impl Manifest {
    fn new(args: &RunArgs, cfg: &ScenarioConfig, files: &[&str]) -> Self {
        let body = json!({
            "format": "swarmcco-run/1",
            "build": BUILD_TAG,
            "config_path": args.scenario.as_ref().map(|p| p.display().to_string()),
            "config": cfg,
            "master_seed": cfg.seed,
            "output_dir": args.out.display().to_string(),
            "started": Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            "finished": Value::Null,
            "status": "running",
            "files": files,
        });
        Self { path: args.out.join(MANIFEST_JSON), body }
    }

    fn write(&self) -> swarmcco::Result<()> {
        report::write_json(&self.path, &self.body)
    }

    fn close(&mut self, status: &str, error: Option<&str>) -> swarmcco::Result<()> {
        self.body["finished"] = json!(Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true));
        self.body["status"] = json!(status);
        if let Some(e) = error {
            self.body["error"] = json!(e);
        }
        self.write()
    }
}

type TrialOutput = (TrialMetrics, Vec<TraceRecord>);

fn run_trials(cfg: &ScenarioConfig, trace: bool) -> swarmcco::Result<Vec<TrialOutput>> {
    Exec::best_available()
        .map_range(cfg.trials, |k| {
            let mut records = Vec::new();
            let sink = if trace { Some(&mut records) } else { None };
            let m = run_trial_with(cfg, trial_seed(cfg.seed, k as u64), Exec::Sequential, sink)?;
            log::debug!("trial {k}: collided={} min_distance={:.3}", m.collided, m.min_interagent_distance);
            Ok((m, records))
        })
        .into_iter()
        .collect()
}

fn execute(args: &RunArgs, cfg: &ScenarioConfig) -> swarmcco::Result<()> {
    let started = Instant::now();
    log::info!(
        "{} trials, {} agents, method {}, noise {}, delta {}",
        cfg.trials,
        cfg.agent_count,
        cfg.method.name(),
        cfg.noise.name(),
        cfg.delta
    );
    let outputs = run_trials(cfg, args.trace)?;
    let (trials, traces): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
    let summary = summarize(&trials, cfg.safe_distance);
    report::write_tables(&args.out, &trials, &summary)?;
    if args.trace {
        let mut w = TraceWriter::create(&args.out.join(TRACE_CSV))?;
        for (k, t) in traces.iter().enumerate() {
            w.append(k, t)?;
        }
        w.finish()?;
    }
    let solves: usize = trials.iter().map(|t| t.solve_times.len()).sum();
    let mean_solve = trials.iter().flat_map(|t| t.solve_times.iter().map(|s| s.1)).sum::<f64>() / solves.max(1) as f64;
    report::write_json(
        &args.out.join(SUMMARY_JSON),
        &json!({
            "format": "swarmcco-summary/1",
            "config": cfg,
            "summary": summary,
            "timing": {
                "wall_seconds": started.elapsed().as_secs_f64(),
                "solves": solves,
                "median_solve_ms": median_solve_time(&trials),
                "mean_solve_ms": mean_solve,
            },
        }),
    )?;
    log::info!(
        "collision trials {}/{}, mean path {:?} m, finished in {:.1}s",
        summary.collision_trials,
        summary.trials,
        summary.mean_path_length,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> u8 {
    let cfg = match resolve_config(args).and_then(|cfg| prepare_out_dir(&args.out).map(|_| cfg)) {
        Ok(cfg) => cfg,
        Err(Failure::Config(msg)) => {
            log::error!("{msg}");
            return 2;
        }
        Err(Failure::Runtime(msg)) => {
            log::error!("{msg}");
            return 1;
        }
    };
    let mut files = vec![MANIFEST_JSON, report::TRIALS_CSV, report::AGENTS_CSV, report::COLLISIONS_CSV, report::HISTOGRAM_CSV];
    if args.trace {
        files.push(TRACE_CSV);
    }
    files.push(SUMMARY_JSON);
    let mut manifest = Manifest::new(args, &cfg, &files);
    if let Err(e) = manifest.write() {
        log::error!("{e}");
        return 1;
    }
    let outcome = execute(args, &cfg);
    let closed = match &outcome {
        Ok(()) => manifest.close("complete", None),
        Err(e) => manifest.close("failed", Some(&e.to_string())),
    };
    match (outcome, closed) {
        (Ok(()), Ok(())) => 0,
        (Err(e), _) | (_, Err(e)) => {
            log::error!("{e}");
            1
        }
    }
}
