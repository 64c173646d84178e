//! Tabular outputs. File names carry the column-layout version; a layout
//! change bumps the suffix rather than silently altering an existing file.
//! Wall-clock quantities never appear in CSVs so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::mpc::SolveStatus;
use crate::sim::{BatchSummary, TraceRecord, TrialMetrics};

pub const TRIALS_CSV: &str = "trials_v1.csv";
pub const AGENTS_CSV: &str = "agents_v1.csv";
pub const COLLISIONS_CSV: &str = "collisions_v1.csv";
pub const HISTOGRAM_CSV: &str = "histogram_v1.csv";
pub const TRACE_CSV: &str = "trace_v1.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Serialize)]
struct TrialRow {
    trial: usize,
    seed: u64,
    collided: bool,
    collision_events: usize,
    min_interagent_distance: f64,
    agents_reached: usize,
    mean_path_length: Option<f64>,
    mean_time_to_goal: Option<f64>,
    infeasible_steps: usize,
    fallback_steps: usize,
    em_failures: usize,
    steps: usize,
}

/// `None` (an empty cell) when no agent reached its goal.
fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

pub fn write_trials(path: &Path, trials: &[TrialMetrics]) -> Result<()> {
    let mut w = writer(path)?;
    for (k, t) in trials.iter().enumerate() {
        let reached = || t.path_length.iter().zip(&t.time_to_goal).filter(|(_, g)| g.is_some());
        w.serialize(TrialRow {
            trial: k,
            seed: t.seed,
            collided: t.collided,
            collision_events: t.collision_events.len(),
            min_interagent_distance: t.min_interagent_distance,
            agents_reached: reached().count(),
            mean_path_length: mean_of(reached().map(|(p, _)| *p)),
            mean_time_to_goal: mean_of(t.time_to_goal.iter().flatten().copied()),
            infeasible_steps: t.infeasible_steps,
            fallback_steps: t.fallback_steps,
            em_failures: t.em_failures,
            steps: t.steps,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_agents(path: &Path, trials: &[TrialMetrics]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["trial", "agent", "path_length", "time_to_goal", "reached"])?;
    for (k, t) in trials.iter().enumerate() {
        for (a, (p, g)) in t.path_length.iter().zip(&t.time_to_goal).enumerate() {
            let time = g.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([k.to_string(), a.to_string(), p.to_string(), time, g.is_some().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_collisions(path: &Path, trials: &[TrialMetrics]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["trial", "time", "agent_i", "agent_j", "distance"])?;
    for (k, t) in trials.iter().enumerate() {
        for e in &t.collision_events {
            w.write_record([
                k.to_string(),
                e.time.to_string(),
                e.pair.0.to_string(),
                e.pair.1.to_string(),
                e.distance.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram(path: &Path, summary: &BatchSummary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["bin_left", "count"])?;
    for (b, c) in summary.histogram_bins.iter().zip(&summary.histogram_counts) {
        w.write_record([format!("{b:.2}"), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Fallback => "fallback",
        SolveStatus::Infeasible => "infeasible",
    }
}

/// Streaming trace writer; rows are appended trial by trial.
pub struct TraceWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = writer(path)?;
        inner.write_record(["trial", "time", "agent", "x", "y", "z", "vx", "vy", "vz", "status", "neighbors"])?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, trial: usize, records: &[TraceRecord]) -> Result<()> {
        for r in records {
            let mut row = vec![trial.to_string(), r.time.to_string(), r.agent.to_string()];
            row.extend(r.position.iter().chain(&r.velocity).map(f64::to_string));
            row.push(status_name(r.status).to_string());
            row.push(r.neighbors.to_string());
            self.inner.write_record(&row)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)
        .map_err(|e| crate::Error::Io(e.to_string()))?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Writes every deterministic table of a finished batch into `dir` and
/// returns the file names written.
pub fn write_tables(dir: &Path, trials: &[TrialMetrics], summary: &BatchSummary) -> Result<Vec<&'static str>> {
    write_trials(&dir.join(TRIALS_CSV), trials)?;
    write_agents(&dir.join(AGENTS_CSV), trials)?;
    write_collisions(&dir.join(COLLISIONS_CSV), trials)?;
    write_histogram(&dir.join(HISTOGRAM_CSV), summary)?;
    Ok(vec![TRIALS_CSV, AGENTS_CSV, COLLISIONS_CSV, HISTOGRAM_CSV])
}
