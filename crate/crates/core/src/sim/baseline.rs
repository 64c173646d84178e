//! Bounding-volume expansion: plain ORCA on the sample-mean neighbor state
//! with the neighbor radius grown by `k_bv` standard deviations along the
//! worst position axis.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::orca::{compute_orca_plane, OrcaPlane};
use crate::uncertainty::SampleSet;

/// `k_bv * sqrt(lambda_max(cov))`.
pub fn inflation(pos_cov: &Matrix3<f64>, k_bv: f64) -> f64 {
    let eig = SymmetricEigen::new((pos_cov + pos_cov.transpose()) * 0.5);
    k_bv * eig.eigenvalues.max().max(0.0).sqrt()
}

pub fn bounding_volume_plane(
    own_pos: &Vector3<f64>,
    own_vel: &Vector3<f64>,
    pos_samples: &SampleSet<3>,
    vel_samples: &SampleSet<3>,
    cfg: &ScenarioConfig,
) -> Result<OrcaPlane> {
    let grow = inflation(&pos_samples.covariance(), cfg.k_bv);
    let r = cfg.orca_radius;
    Ok(compute_orca_plane(own_pos, own_vel, &pos_samples.mean(), &vel_samples.mean(), r, r + grow, cfg.tau)?.plane)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inflation_uses_largest_axis() {
        let cov = Matrix3::from_diagonal(&Vector3::new(0.04, 0.25, 0.01));
        assert!((inflation(&cov, 2.0) - 1.0).abs() < 1e-12);
        assert_eq!(inflation(&Matrix3::zeros(), 1.96), 0.0);
    }

    #[test]
    fn zero_spread_matches_plain_orca() {
        let cfg = ScenarioConfig::default();
        let pj = Vector3::new(3.0, 0.5, 2.0);
        let vj = Vector3::new(-1.0, 0.0, 0.0);
        let pos = SampleSet::new(vec![pj; 40]).unwrap();
        let vel = SampleSet::new(vec![vj; 40]).unwrap();
        let own = Vector3::new(0.0, 0.0, 2.0);
        let ov = Vector3::new(1.0, 0.0, 0.0);
        let bv = bounding_volume_plane(&own, &ov, &pos, &vel, &cfg).unwrap();
        let plain = compute_orca_plane(&own, &ov, &pj, &vj, 0.5, 0.5, cfg.tau).unwrap().plane;
        assert!((bv.m - plain.m).norm() < 1e-12 && (bv.b - plain.b).abs() < 1e-12);
    }
}
