//! Scenario configuration: JSON ingestion with defaults, validation and the
//! named sensor-noise presets.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{MpcWeights, SolverSettings};
use crate::uncertainty::{EmConfig, GaussianSpec, GmmSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Deterministic,
    #[serde(alias = "bv")]
    BvExpansion,
    Gaussian,
    #[serde(alias = "gmm2")]
    GmmN2,
    #[serde(alias = "gmm3")]
    GmmN3,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Deterministic, Method::BvExpansion, Method::Gaussian, Method::GmmN2, Method::GmmN3];

    pub fn name(self) -> &'static str {
        match self {
            Method::Deterministic => "deterministic",
            Method::BvExpansion => "bv_expansion",
            Method::Gaussian => "gaussian",
            Method::GmmN2 => "gmm_n2",
            Method::GmmN3 => "gmm_n3",
        }
    }

    /// Mixture components fitted to the plane normals, if any.
    pub fn mixture_components(self) -> Option<usize> {
        match self {
            Method::GmmN2 => Some(2),
            Method::GmmN3 => Some(3),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "deterministic" => Some(Method::Deterministic),
            "bv" | "bv_expansion" => Some(Method::BvExpansion),
            "gaussian" => Some(Method::Gaussian),
            "gmm2" | "gmm_n2" => Some(Method::GmmN2),
            "gmm3" | "gmm_n3" => Some(Method::GmmN3),
            _ => None,
        }
    }
}

/// Named sensor-noise models. Each preset is a three-component mixture
/// whose component `k` has mean `mu[k] * (1, 1, 1)` and covariance
/// `sigma[k] * I`, with equal weights; velocity noise halves both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    None,
    Sigma1,
    Sigma2,
}

impl NoisePreset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(NoisePreset::None),
            "sigma1" => Some(NoisePreset::Sigma1),
            "sigma2" => Some(NoisePreset::Sigma2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoisePreset::None => "none",
            NoisePreset::Sigma1 => "sigma1",
            NoisePreset::Sigma2 => "sigma2",
        }
    }

    fn table(self) -> Option<([f64; 3], [f64; 3])> {
        match self {
            NoisePreset::None => None,
            NoisePreset::Sigma1 => Some(([0.15, 0.08, -0.05], [0.06, 0.7, 0.3])),
            NoisePreset::Sigma2 => Some(([0.2, 0.0, -0.2], [1.0, 0.3, 1.0])),
        }
    }

    pub fn position_gmm(self) -> GmmSpec<3> {
        match self.table() {
            None => GmmSpec::single(GaussianSpec::point(Vector3::zeros())),
            Some((mu, sigma)) => {
                let components = (0..3)
                    .map(|k| GaussianSpec { mean: Vector3::repeat(mu[k]), cov: Matrix3::identity() * sigma[k] })
                    .collect();
                GmmSpec { components, alphas: vec![1.0 / 3.0; 3] }
            }
        }
    }

    pub fn velocity_gmm(self) -> GmmSpec<3> {
        self.position_gmm().scaled(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub agent_count: usize,
    /// Start circle radius; each agent flies to the antipodal point.
    pub circle_radius: f64,
    pub altitude: f64,
    pub agent_radius: f64,
    /// Radius used in the velocity-obstacle construction.
    pub orca_radius: f64,
    pub sensing_radius: f64,
    pub neighbor_cap: usize,
    pub noise: NoisePreset,
    pub delta: f64,
    pub method: Method,
    pub v_max: f64,
    pub a_max: f64,
    pub v_cruise: f64,
    pub trial_duration: f64,
    pub seed: u64,
    pub trials: usize,
    pub horizon: usize,
    pub dt: f64,
    /// Velocity-obstacle truncation horizon.
    pub tau: f64,
    /// Noisy neighbor samples per step used to build plane distributions.
    pub samples: usize,
    pub goal_tolerance: f64,
    /// Distance below which a trial counts toward the unsafe histogram tail.
    pub safe_distance: f64,
    /// Radius inflation gain for the bounding-volume baseline.
    pub k_bv: f64,
    pub mass: f64,
    pub gravity: f64,
    pub tau_att: f64,
    pub substeps: usize,
    pub weights: MpcWeights,
    pub solver: SolverSettings,
    pub em: EmConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            agent_count: 4,
            circle_radius: 20.0,
            altitude: 2.0,
            agent_radius: 0.25,
            orca_radius: 0.5,
            sensing_radius: 8.0,
            neighbor_cap: 10,
            noise: NoisePreset::Sigma1,
            delta: 0.9,
            method: Method::Gaussian,
            v_max: 2.0,
            a_max: 5.0,
            v_cruise: 40.0 / 30.0,
            trial_duration: 60.0,
            seed: 0,
            trials: 1,
            horizon: 8,
            dt: 0.1,
            tau: 3.0,
            samples: 40,
            goal_tolerance: 0.3,
            safe_distance: 1.0,
            k_bv: 1.96,
            mass: 1.5,
            gravity: 9.81,
            tau_att: 0.05,
            substeps: 4,
            weights: MpcWeights::default(),
            solver: SolverSettings::default(),
            em: EmConfig::default(),
        }
    }
}

fn cfg_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.into(), message: message.into() }
}

impl ScenarioConfig {
    /// Distance below which two agents are in collision.
    pub fn collision_distance(&self) -> f64 {
        2.0 * self.agent_radius
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("circle_radius", self.circle_radius),
            ("agent_radius", self.agent_radius),
            ("orca_radius", self.orca_radius),
            ("sensing_radius", self.sensing_radius),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("v_cruise", self.v_cruise),
            ("trial_duration", self.trial_duration),
            ("dt", self.dt),
            ("tau", self.tau),
            ("goal_tolerance", self.goal_tolerance),
            ("safe_distance", self.safe_distance),
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("solver.tol", self.solver.tol),
            ("solver.slack_weight", self.solver.slack_weight),
            ("solver.yaw_rate_max", self.solver.yaw_rate_max),
            ("solver.smoothing", self.solver.smoothing),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(cfg_err(key, format!("must be a positive finite number, got {v}")));
            }
        }
        for (key, v) in [("altitude", self.altitude), ("k_bv", self.k_bv), ("tau_att", self.tau_att)] {
            if !v.is_finite() || (key != "altitude" && v < 0.0) {
                return Err(cfg_err(key, format!("must be finite{}, got {v}", if key == "altitude" { "" } else { " and non-negative" })));
            }
        }
        if self.agent_count == 0 {
            return Err(cfg_err("agent_count", "at least one agent is required"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(cfg_err("delta", format!("must lie strictly between 0 and 1, got {}", self.delta)));
        }
        if self.orca_radius < self.agent_radius {
            return Err(cfg_err("orca_radius", "must be at least agent_radius"));
        }
        for (key, v) in [
            ("trials", self.trials),
            ("horizon", self.horizon),
            ("neighbor_cap", self.neighbor_cap),
            ("substeps", self.substeps),
            ("solver.max_iters", self.solver.max_iters),
            ("em.max_iters", self.em.max_iters),
        ] {
            if v == 0 {
                return Err(cfg_err(key, "must be at least 1"));
            }
        }
        if self.samples < 2 {
            return Err(cfg_err("samples", "at least two samples are required"));
        }
        if let Some(n) = self.method.mixture_components() {
            if self.samples < n * 4 {
                return Err(cfg_err("samples", format!("{n} mixture components need at least {} samples", n * 4)));
            }
        }
        if self.weights.q.iter().chain(&self.weights.r).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(cfg_err("weights", "entries must be finite and non-negative"));
        }
        if !(self.em.reg >= 0.0 && self.em.tol >= 0.0) {
            return Err(cfg_err("em", "reg and tol must be non-negative"));
        }
        Ok(())
    }

    /// Pretty JSON of the resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a JSON config. Errors name the offending key and,
/// for syntax or schema problems, the line and column.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let key = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
            .unwrap_or("<document>")
            .to_string();
        cfg_err(&key, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err("<file>", format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}
