//! Reciprocal velocity obstacles in 3D.
//!
//! The velocity obstacle of agent `i` induced by `j` is the set of relative
//! velocities `v_i - v_j` that bring the two spheres into contact within
//! `tau` seconds: a cone with apex at the origin around `-(p_i - p_j)`,
//! truncated by a sphere of radius `R_ij / tau` centered at
//! `-(p_i - p_j) / tau`.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::uncertainty::SampleSet;

/// Lateral perturbation applied to exactly head-on relative velocities.
pub const TIE_BREAK_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoCone {
    /// Relative position `r_ij = p_i - p_j`.
    pub apex_offset: Vector3<f64>,
    pub combined_radius: f64,
    pub tau: f64,
}

impl VoCone {
    pub fn new(apex_offset: Vector3<f64>, combined_radius: f64, tau: f64) -> Result<Self> {
        if !(apex_offset.norm() > 0.0) || apex_offset.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("relative position must be non-zero and finite".into()));
        }
        if !(combined_radius > 0.0 && combined_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("combined radius must be positive, got {combined_radius}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { apex_offset, combined_radius, tau })
    }

    /// True when `rel_vel` leads to contact within `tau` under constant
    /// velocities.
    pub fn contains(&self, rel_vel: &Vector3<f64>) -> bool {
        let r = self.apex_offset;
        let vv = rel_vel.norm_squared();
        let t = if vv > 0.0 { (-r.dot(rel_vel) / vv).clamp(0.0, self.tau) } else { 0.0 };
        (r + rel_vel * t).norm() < self.combined_radius
    }
}

/// Linear constraint `m^T v - b >= 0` on agent `i`'s new velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrcaPlane {
    pub m: Vector3<f64>,
    pub b: f64,
}

impl OrcaPlane {
    pub fn margin(&self, v: &Vector3<f64>) -> f64 {
        self.m.dot(v) - self.b
    }

    pub fn satisfied(&self, v: &Vector3<f64>) -> bool {
        self.margin(v) >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryProjection {
    /// Smallest change that moves the relative velocity onto the VO boundary.
    pub u: Vector3<f64>,
    /// Outward unit normal of the VO at the projected point.
    pub n: Vector3<f64>,
    /// Set when the agents already overlap; `n` then separates the centers
    /// and `u` moves the relative velocity to zero.
    pub overlapping: bool,
}

/// Unit vector perpendicular to `axis`. It is odd in `axis`, so the two
/// agents of a pair (which see opposite axes) get mirrored perturbations.
fn lateral(axis: &Vector3<f64>) -> Vector3<f64> {
    let c = axis.cross(&Vector3::z());
    if c.norm() > 1e-9 * axis.norm() {
        c.normalize()
    } else {
        axis.cross(&Vector3::x()).normalize()
    }
}

/// Projects `rel_vel` onto the boundary of the `tau`-truncated VO.
pub fn closest_boundary_point(
    rel_pos: &Vector3<f64>,
    rel_vel: &Vector3<f64>,
    combined_radius: f64,
    tau: f64,
) -> Result<BoundaryProjection> {
    if rel_pos.iter().chain(rel_vel.iter()).any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("relative state must be finite".into()));
    }
    if !(combined_radius > 0.0) || !(tau > 0.0) {
        return Err(Error::InvalidArgument("radius and tau must be positive".into()));
    }
    let dist_sq = rel_pos.norm_squared();
    if dist_sq == 0.0 {
        return Err(Error::InvalidArgument("agents share the same position".into()));
    }
    let r_sq = combined_radius * combined_radius;
    if dist_sq <= r_sq {
        return Ok(BoundaryProjection { u: -rel_vel, n: rel_pos / dist_sq.sqrt(), overlapping: true });
    }

    // Position of j relative to i; the VO points along it.
    let p = -rel_pos;
    let inv_tau = 1.0 / tau;
    let w = rel_vel - p * inv_tau;
    let w_sq = w.norm_squared();
    let dot = w.dot(&p);
    if dot < 0.0 && dot * dot > r_sq * w_sq {
        // Nearest boundary point lies on the truncation cap.
        let w_len = w_sq.sqrt();
        let n = w / w_len;
        return Ok(BoundaryProjection { u: n * (combined_radius * inv_tau - w_len), n, overlapping: false });
    }

    let mut v = *rel_vel;
    if p.cross(&v).norm() <= 1e-9 * p.norm() * v.norm() {
        v += lateral(&p) * TIE_BREAK_EPS;
    }
    let a = dist_sq;
    let b = p.dot(&v);
    let c = v.norm_squared() - p.cross(&v).norm_squared() / (dist_sq - r_sq);
    let t = (b + (b * b - a * c).max(0.0).sqrt()) / a;
    let ww = v - p * t;
    let ww_len = ww.norm();
    let n = if ww_len > 0.0 { ww / ww_len } else { lateral(&p) };
    Ok(BoundaryProjection { u: n * (combined_radius * t - ww_len), n, overlapping: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrcaResult {
    pub plane: OrcaPlane,
    pub u: Vector3<f64>,
    pub overlapping: bool,
}

/// ORCA plane for agent `i` against `j`, taking half of the required
/// relative-velocity change. Overlapping agents get a plane along
/// `p_i - p_j` through the midpoint velocity.
#[allow(clippy::too_many_arguments)]
pub fn compute_orca_plane(
    p_i: &Vector3<f64>,
    v_i: &Vector3<f64>,
    p_j: &Vector3<f64>,
    v_j: &Vector3<f64>,
    radius_i: f64,
    radius_j: f64,
    tau: f64,
) -> Result<OrcaResult> {
    let rel_pos = p_i - p_j;
    let rel_vel = v_i - v_j;
    let proj = closest_boundary_point(&rel_pos, &rel_vel, radius_i + radius_j, tau)?;
    let m = proj.n;
    let b = m.dot(&(v_i + proj.u * 0.5));
    Ok(OrcaResult { plane: OrcaPlane { m, b }, u: proj.u, overlapping: proj.overlapping })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSamples {
    pub m_samples: SampleSet<3>,
    /// Offset computed from the sample-mean states.
    pub b_mean: f64,
    /// Full plane from the sample-mean states.
    pub mean_plane: OrcaPlane,
    pub overlapping_samples: usize,
}

/// Plane normals for each joint sample of the two agents' states, with the
/// offset `b` taken from the mean states.
#[allow(clippy::too_many_arguments)]
pub fn sample_orca_planes(
    pos_i: &SampleSet<3>,
    vel_i: &SampleSet<3>,
    pos_j: &SampleSet<3>,
    vel_j: &SampleSet<3>,
    radius_i: f64,
    radius_j: f64,
    tau: f64,
) -> Result<PlaneSamples> {
    let s = pos_i.len();
    if vel_i.len() != s || pos_j.len() != s || vel_j.len() != s {
        return Err(Error::InvalidArgument("sample sets must have equal sizes".into()));
    }
    let mut normals = Vec::with_capacity(s);
    let mut overlapping = 0;
    for k in 0..s {
        let res = compute_orca_plane(
            &pos_i.samples[k],
            &vel_i.samples[k],
            &pos_j.samples[k],
            &vel_j.samples[k],
            radius_i,
            radius_j,
            tau,
        )?;
        overlapping += usize::from(res.overlapping);
        normals.push(res.plane.m);
    }
    let mean = compute_orca_plane(&pos_i.mean(), &vel_i.mean(), &pos_j.mean(), &vel_j.mean(), radius_i, radius_j, tau)?;
    Ok(PlaneSamples {
        m_samples: SampleSet::new(normals)?,
        b_mean: mean.plane.b,
        mean_plane: mean.plane,
        overlapping_samples: overlapping,
    })
}
