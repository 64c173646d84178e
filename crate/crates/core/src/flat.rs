//! Flat-output quadrotor model.
//!
//! Planning happens in the flat space `x = [r, v, psi]`, `u = [a, psi_rate]`,
//! where the dynamics are a per-axis double integrator plus a yaw
//! integrator. Ground truth is advanced with the translational rigid-body
//! equations `m r'' = -m g z_W + T z_B`, with roll and pitch following their
//! commands through a first-order lag.

use nalgebra::{SMatrix, SVector, Vector3};
use std::f64::consts::PI;

use crate::error::{ensure_finite, Error, Result};

pub type StateMatrix = SMatrix<f64, 7, 7>;
pub type InputMatrix = SMatrix<f64, 7, 4>;
pub type StateVector = SVector<f64, 7>;
pub type InputVector = SVector<f64, 4>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps -pi to +pi already; guard the rounding edge.
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub psi: f64,
}

impl FlatState {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>, psi: f64) -> Self {
        Self { r, v, psi: wrap_angle(psi) }
    }

    pub fn at_rest(r: Vector3<f64>) -> Self {
        Self::new(r, Vector3::zeros(), 0.0)
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from_column_slice(&[
            self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z, self.psi,
        ])
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self::new(
            Vector3::new(x[0], x[1], x[2]),
            Vector3::new(x[3], x[4], x[5]),
            x[6],
        )
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.v.iter()).all(|c| c.is_finite()) && self.psi.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatInput {
    pub a: Vector3<f64>,
    pub psi_rate: f64,
}

impl FlatInput {
    pub fn new(a: Vector3<f64>, psi_rate: f64) -> Self {
        Self { a, psi_rate }
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.a.x, self.a.y, self.a.z, self.psi_rate)
    }

    pub fn from_vector(u: &InputVector) -> Self {
        Self::new(Vector3::new(u[0], u[1], u[2]), u[3])
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|c| c.is_finite()) && self.psi_rate.is_finite()
    }
}

/// Inner-loop command: collective thrust, roll and pitch set points and a
/// yaw-rate set point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorCommand {
    pub thrust: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw_rate: f64,
}

impl QuadrotorCommand {
    pub fn hover(mass: f64, g: f64) -> Self {
        Self { thrust: mass * g, roll: 0.0, pitch: 0.0, yaw_rate: 0.0 }
    }
}

/// Ground-truth translational state of one vehicle. `attitude` holds roll,
/// pitch and yaw in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub attitude: Vector3<f64>,
    pub mass: f64,
    pub g: f64,
}

impl PlantState {
    pub fn at_rest(r: Vector3<f64>, mass: f64, g: f64) -> Self {
        Self { r, v: Vector3::zeros(), attitude: Vector3::zeros(), mass, g }
    }

    pub fn flat_state(&self) -> FlatState {
        FlatState::new(self.r, self.v, self.attitude.z)
    }
}

/// Zero-order-hold discretization of the flat model.
pub fn discretize_flat_dynamics(dt: f64) -> Result<(StateMatrix, InputMatrix)> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive and finite, got {dt}")));
    }
    let mut a = StateMatrix::identity();
    let mut b = InputMatrix::zeros();
    for axis in 0..3 {
        a[(axis, axis + 3)] = dt;
        b[(axis, axis)] = 0.5 * dt * dt;
        b[(axis + 3, axis)] = dt;
    }
    b[(6, 3)] = dt;
    Ok((a, b))
}

/// Applies the discrete flat dynamics to a sequence of inputs. The result
/// has `inputs.len() + 1` states, starting with `x0`.
pub fn flat_rollout(x0: &FlatState, inputs: &[FlatInput], dt: f64) -> Result<Vec<FlatState>> {
    let (a, b) = discretize_flat_dynamics(dt)?;
    if !x0.is_finite() {
        return Err(Error::InvalidArgument("initial flat state is not finite".into()));
    }
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(*x0);
    let mut x = x0.to_vector();
    for (k, u) in inputs.iter().enumerate() {
        if !u.is_finite() {
            return Err(Error::InvalidArgument(format!("flat input {k} is not finite")));
        }
        x = a * x + b * u.to_vector();
        x[6] = wrap_angle(x[6]);
        out.push(FlatState::from_vector(&x));
    }
    Ok(out)
}

/// Body z-axis in the world frame for ZYX Euler angles.
pub fn thrust_axis(roll: f64, pitch: f64, yaw: f64) -> Vector3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Vector3::new(cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr)
}

/// Converts a flat input into a thrust/attitude command.
///
/// Thrust is computed from the gravity-compensated specific force
/// `f = a + g z_W`, so a zero acceleration request yields hover. The yaw rate
/// is passed through.
pub fn inverse_map(u: &FlatInput, psi: f64, mass: f64, g: f64) -> Result<QuadrotorCommand> {
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::InvalidArgument(format!("mass must be positive, got {mass}")));
    }
    ensure_finite("g", g)?;
    ensure_finite("psi", psi)?;
    if !u.is_finite() {
        return Err(Error::InvalidArgument("flat input is not finite".into()));
    }
    let f = u.a + Vector3::new(0.0, 0.0, g);
    if f.z <= 0.0 {
        return Err(Error::UnreachableAttitude { vertical: f.z });
    }
    let norm = f.norm();
    let (sy, cy) = psi.sin_cos();
    // Specific force expressed in the yaw-aligned frame.
    let fx = cy * f.x + sy * f.y;
    let fy = -sy * f.x + cy * f.y;
    let roll = (-fy / norm).clamp(-1.0, 1.0).asin();
    let pitch = fx.atan2(f.z);
    Ok(QuadrotorCommand { thrust: mass * norm, roll, pitch, yaw_rate: u.psi_rate })
}

#[derive(Clone, Copy)]
struct Deriv {
    r: Vector3<f64>,
    v: Vector3<f64>,
    att: Vector3<f64>,
}

fn plant_derivative(s: &PlantState, cmd: &QuadrotorCommand, tau_att: f64) -> Deriv {
    let att = s.attitude;
    let acc = thrust_axis(att.x, att.y, att.z) * (cmd.thrust / s.mass) - Vector3::new(0.0, 0.0, s.g);
    let att_rate = if tau_att > 0.0 {
        Vector3::new((cmd.roll - att.x) / tau_att, (cmd.pitch - att.y) / tau_att, cmd.yaw_rate)
    } else {
        Vector3::new(0.0, 0.0, cmd.yaw_rate)
    };
    Deriv { r: s.v, v: acc, att: att_rate }
}

fn offset(s: &PlantState, d: &Deriv, h: f64) -> PlantState {
    PlantState { r: s.r + d.r * h, v: s.v + d.v * h, attitude: s.attitude + d.att * h, ..*s }
}

/// One RK4 step of the translational plant.
///
/// Roll and pitch follow the command with time constant `tau_att`;
/// `tau_att == 0` snaps them to the command at the start of the step.
pub fn nonlinear_step(s: &PlantState, cmd: &QuadrotorCommand, dt: f64, tau_att: f64) -> Result<PlantState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive and finite, got {dt}")));
    }
    if !(tau_att.is_finite() && tau_att >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau_att must be non-negative, got {tau_att}")));
    }
    if !(s.mass.is_finite() && s.mass > 0.0) {
        return Err(Error::InvalidArgument(format!("mass must be positive, got {}", s.mass)));
    }
    if cmd.thrust < 0.0 || !cmd.thrust.is_finite() {
        return Err(Error::InvalidArgument(format!("thrust must be non-negative, got {}", cmd.thrust)));
    }
    let mut start = *s;
    if tau_att == 0.0 {
        start.attitude.x = cmd.roll;
        start.attitude.y = cmd.pitch;
    }
    let k1 = plant_derivative(&start, cmd, tau_att);
    let k2 = plant_derivative(&offset(&start, &k1, 0.5 * dt), cmd, tau_att);
    let k3 = plant_derivative(&offset(&start, &k2, 0.5 * dt), cmd, tau_att);
    let k4 = plant_derivative(&offset(&start, &k3, dt), cmd, tau_att);
    let w = dt / 6.0;
    let mut next = PlantState {
        r: start.r + (k1.r + k2.r * 2.0 + k3.r * 2.0 + k4.r) * w,
        v: start.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * w,
        attitude: start.attitude + (k1.att + k2.att * 2.0 + k3.att * 2.0 + k4.att) * w,
        ..start
    };
    next.attitude.z = wrap_angle(next.attitude.z);
    Ok(next)
}

/// Plant integration settings used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantModel {
    pub tau_att: f64,
    pub substeps: usize,
}

impl Default for PlantModel {
    fn default() -> Self {
        Self { tau_att: 0.05, substeps: 4 }
    }
}

impl PlantModel {
    /// Holds `cmd` for `dt` seconds, integrating with `substeps` RK4 steps.
    pub fn advance(&self, s: &PlantState, cmd: &QuadrotorCommand, dt: f64) -> Result<PlantState> {
        let n = self.substeps.max(1);
        let h = dt / n as f64;
        let mut state = *s;
        for _ in 0..n {
            state = nonlinear_step(&state, cmd, h, self.tau_att)?;
        }
        Ok(state)
    }
}
