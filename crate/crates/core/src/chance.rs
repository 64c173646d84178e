//! Deterministic surrogates of the probabilistic ORCA constraint
//! `P(m^T v - b >= 0) >= delta`.
//!
//! For Gaussian `m ~ N(mu, Sigma)` the constraint is equivalent to the
//! second-order cone `mu^T v - b >= Phi^-1(delta) * ||Sigma^(1/2) v||`.
//! For a mixture, each component gets its own cone at level `eta_i`, and the
//! levels must satisfy `sum_i alpha_i eta_i >= delta`.

use nalgebra::{Matrix3, Vector3};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::orca::OrcaPlane;
use crate::uncertainty::{GaussianSpec, GmmSpec};

/// Bounds on per-component confidence levels.
pub const ETA_MIN: f64 = 0.01;
pub const ETA_MAX: f64 = 0.99;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile `Phi^-1(level)`.
pub fn quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {level}")));
    }
    Ok(Normal::standard().inverse_cdf(level))
}

/// `mu^T v - b - kappa * ||sqrt_cov^T v|| >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocConstraint {
    pub mu: Vector3<f64>,
    pub sqrt_cov: Matrix3<f64>,
    pub b: f64,
    pub kappa: f64,
}

impl SocConstraint {
    /// The plain ORCA half-space.
    pub fn deterministic(plane: &OrcaPlane) -> Self {
        Self { mu: plane.m, sqrt_cov: Matrix3::zeros(), b: plane.b, kappa: 0.0 }
    }

    pub fn std_dev(&self, v: &Vector3<f64>) -> f64 {
        (self.sqrt_cov.transpose() * v).norm()
    }

    pub fn margin(&self, v: &Vector3<f64>) -> f64 {
        self.mu.dot(v) - self.b - self.kappa * self.std_dev(v)
    }

    pub fn satisfied(&self, v: &Vector3<f64>) -> bool {
        self.margin(v) >= 0.0
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        self.sqrt_cov * self.sqrt_cov.transpose()
    }
}

/// Second-order cone surrogate for a Gaussian normal vector.
pub fn gaussian_reformulate(mu_m: &Vector3<f64>, cov_m: &Matrix3<f64>, b: f64, delta: f64) -> Result<SocConstraint> {
    let kappa = quantile(delta)?;
    let spec = GaussianSpec::new(*mu_m, *cov_m)?;
    Ok(SocConstraint { mu: spec.mean, sqrt_cov: spec.sqrt_cov()?, b, kappa })
}

/// Probability that `m^T v - b >= 0` for `m ~ N(mu, Sigma)` given through
/// a square-root factor. Falls back to the mean indicator when `v^T Sigma v`
/// vanishes.
pub fn satisfaction_probability_sqrt(mu: &Vector3<f64>, sqrt_cov: &Matrix3<f64>, b: f64, v: &Vector3<f64>) -> f64 {
    let mean = mu.dot(v) - b;
    let sd = (sqrt_cov.transpose() * v).norm();
    if sd > 0.0 {
        normal_cdf(mean / sd)
    } else if mean >= 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn satisfaction_probability_component(mu: &Vector3<f64>, cov: &Matrix3<f64>, b: f64, v: &Vector3<f64>) -> f64 {
    let var = v.dot(&(cov * v));
    let mean = mu.dot(v) - b;
    if var > 0.0 {
        normal_cdf(mean / var.sqrt())
    } else if mean >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Per-component cone templates sharing one offset, plus the mixture
/// weights and required confidence. The levels `eta_i` are decided by the
/// planner.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmChanceConstraint {
    pub components: Vec<SocConstraint>,
    pub alphas: Vec<f64>,
    pub delta: f64,
}

impl GmmChanceConstraint {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn b(&self) -> f64 {
        self.components[0].b
    }

    /// Per-component margins at levels `etas`.
    pub fn margins(&self, v: &Vector3<f64>, etas: &[f64]) -> Result<Vec<f64>> {
        if etas.len() != self.len() {
            return Err(Error::InvalidArgument("one level per component is required".into()));
        }
        self.components
            .iter()
            .zip(etas)
            .map(|(c, eta)| Ok(c.mu.dot(v) - c.b - quantile(*eta)? * c.std_dev(v)))
            .collect()
    }

    /// `sum_i alpha_i eta_i - delta`.
    pub fn allocation_margin(&self, etas: &[f64]) -> f64 {
        self.alphas.iter().zip(etas).map(|(a, e)| a * e).sum::<f64>() - self.delta
    }

    /// Feasibility of `(v, eta)` within `tol`.
    pub fn feasible(&self, v: &Vector3<f64>, etas: &[f64], tol: f64) -> bool {
        etas.iter().all(|e| (ETA_MIN - tol..=ETA_MAX + tol).contains(e))
            && self.allocation_margin(etas) >= -tol
            && self.margins(v, etas).is_ok_and(|m| m.iter().all(|x| *x >= -tol))
    }

    pub fn satisfaction_probability(&self, v: &Vector3<f64>) -> f64 {
        satisfaction_probability_gmm(self, v)
    }
}

/// Mixture probability `sum_i alpha_i P_i(v)`.
pub fn satisfaction_probability_gmm(gmm: &GmmChanceConstraint, v: &Vector3<f64>) -> f64 {
    gmm.components
        .iter()
        .zip(&gmm.alphas)
        .map(|(c, a)| a * satisfaction_probability_sqrt(&c.mu, &c.sqrt_cov, c.b, v))
        .sum()
}

pub fn gmm_reformulate(m_gmm: &GmmSpec<3>, b: f64, delta: f64) -> Result<GmmChanceConstraint> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let spec = GmmSpec::new(m_gmm.components.clone(), m_gmm.alphas.clone())?;
    let components = spec
        .components
        .iter()
        .map(|c| Ok(SocConstraint { mu: c.mean, sqrt_cov: c.sqrt_cov()?, b, kappa: 0.0 }))
        .collect::<Result<Vec<_>>>()?;
    Ok(GmmChanceConstraint { components, alphas: spec.alphas, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::GaussianSpec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn mc_probability(mu: &Vector3<f64>, sqrt_cov: &Matrix3<f64>, b: f64, v: &Vector3<f64>, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hits = (0..n)
            .filter(|_| {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                (mu + sqrt_cov * z).dot(v) - b >= 0.0
            })
            .count();
        hits as f64 / n as f64
    }

    #[test]
    fn quantile_values() {
        assert_eq!(quantile(0.5).unwrap(), 0.0);
        // 50-digit reference values.
        assert_relative_eq!(quantile(0.9).unwrap(), 1.281_551_565_544_600_5, epsilon = 1e-12);
        assert_relative_eq!(quantile(0.75).unwrap(), 0.674_489_750_196_081_7, epsilon = 1e-12);
        assert_relative_eq!(quantile(0.99).unwrap(), 2.326_347_874_040_841, epsilon = 1e-12);
        for x in [0.75, 0.9, 0.99] {
            assert_relative_eq!(quantile(x).unwrap(), -quantile(1.0 - x).unwrap(), epsilon = 1e-12);
        }
        for x in [1e-8, 0.01, 0.3, 0.5, 0.77, 0.999999] {
            assert!((normal_cdf(quantile(x).unwrap()) - x).abs() < 1e-10);
        }
        assert!(quantile(0.0).is_err() && quantile(1.0).is_err() && quantile(f64::NAN).is_err());
    }

    #[test]
    fn zero_covariance_is_deterministic() {
        let mu = Vector3::new(0.6, 0.8, 0.0);
        for delta in [0.5, 0.75, 0.99] {
            let c = gaussian_reformulate(&mu, &Matrix3::zeros(), 0.3, delta).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..1000 {
                let v = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
                assert_eq!(c.satisfied(&v), mu.dot(&v) >= 0.3);
            }
        }
    }

    #[test]
    fn median_level_is_mean_half_space() {
        let cov = Matrix3::new(0.3, 0.1, 0.0, 0.1, 0.2, 0.0, 0.0, 0.0, 0.1);
        let c = gaussian_reformulate(&Vector3::x(), &cov, 0.1, 0.5).unwrap();
        assert_eq!(c.kappa, 0.0);
        assert!((c.covariance() - cov).abs().max() < 1e-9);
    }

    #[test]
    fn boundary_velocity_hits_delta() {
        let c = gaussian_reformulate(&Vector3::x(), &(Matrix3::identity() * 0.04), 0.0, 0.9).unwrap();
        // On the x-axis the cone margin is v (1 - 0.2 kappa) - 0 which is
        // never zero, so use a direction with a y component.
        // mu.v - kappa * 0.2 |v| = 0  =>  v_x = 0.2 kappa |v|.
        let k = c.kappa * 0.2;
        let vx = k / (1.0 - k * k).sqrt();
        let v = Vector3::new(vx, 1.0, 0.0);
        assert!(c.margin(&v).abs() < 1e-12);
        let p = mc_probability(&c.mu, &c.sqrt_cov, c.b, &v, 1_000_000, 2);
        assert!((p - 0.9).abs() < 0.005, "MC probability {p}");
    }

    #[test]
    fn component_probability_cases() {
        let cov = Matrix3::identity() * 0.01;
        let v = Vector3::new(0.0, 1.0, 0.0);
        assert_relative_eq!(satisfaction_probability_component(&Vector3::x(), &cov, 0.0, &v), 0.5);
        assert_eq!(satisfaction_probability_component(&Vector3::x(), &Matrix3::zeros(), 0.0, &Vector3::x()), 1.0);
        let v = Vector3::new(0.2, 0.0, 0.0);
        let p = satisfaction_probability_component(&Vector3::x(), &cov, 0.0, &v);
        let mc = mc_probability(&Vector3::x(), &(Matrix3::identity() * 0.1), 0.0, &v, 1_000_000, 3);
        assert!((p - mc).abs() < 0.003);
        // A shifted offset gives a non-trivial probability.
        let p = satisfaction_probability_component(&Vector3::x(), &cov, 0.19, &v);
        let mc = mc_probability(&Vector3::x(), &(Matrix3::identity() * 0.1), 0.19, &v, 1_000_000, 4);
        assert!((p - mc).abs() < 0.003, "{p} vs {mc}");
    }

    fn two_component() -> GmmChanceConstraint {
        let a = GaussianSpec::new(Vector3::new(0.9, 0.2, 0.0), Matrix3::identity() * 0.01).unwrap();
        let b = GaussianSpec::new(Vector3::new(0.4, 0.7, 0.1), Matrix3::identity() * 0.09).unwrap();
        gmm_reformulate(&GmmSpec::new(vec![a, b], vec![0.35, 0.65]).unwrap(), 0.3, 0.9).unwrap()
    }

    #[test]
    fn gmm_probability_cases() {
        let g = GaussianSpec::new(Vector3::new(0.9, 0.2, 0.0), Matrix3::identity() * 0.02).unwrap();
        let single = gmm_reformulate(&GmmSpec::single(g.clone()), 0.3, 0.9).unwrap();
        let v = Vector3::new(0.5, 0.4, 0.1);
        assert_relative_eq!(
            satisfaction_probability_gmm(&single, &v),
            satisfaction_probability_component(&g.mean, &g.cov, 0.3, &v),
            epsilon = 1e-12
        );
        let same = gmm_reformulate(&GmmSpec::new(vec![g.clone(), g.clone()], vec![0.2, 0.8]).unwrap(), 0.3, 0.9).unwrap();
        assert_relative_eq!(satisfaction_probability_gmm(&same, &v), satisfaction_probability_gmm(&single, &v), epsilon = 1e-12);

        let two = two_component();
        let p = satisfaction_probability_gmm(&two, &v);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| {
                let c = if rng.random::<f64>() < 0.35 { &two.components[0] } else { &two.components[1] };
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                (c.mu + c.sqrt_cov * z).dot(&v) - c.b >= 0.0
            })
            .count();
        assert!((p - hits as f64 / n as f64).abs() < 0.003);
    }

    #[test]
    fn single_component_reduces_to_gaussian() {
        let g = GaussianSpec::new(Vector3::new(0.7, 0.6, 0.0), Matrix3::identity() * 0.03).unwrap();
        let gmm = gmm_reformulate(&GmmSpec::single(g.clone()), 0.2, 0.9).unwrap();
        let soc = gaussian_reformulate(&g.mean, &g.cov, 0.2, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let v = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            assert_eq!(gmm.feasible(&v, &[0.9], 0.0), soc.satisfied(&v));
        }
    }

    #[test]
    fn feasible_allocations_lower_bound_probability() {
        let two = two_component();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 2000 {
            let v = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let etas = [rng.random_range(ETA_MIN..ETA_MAX), rng.random_range(ETA_MIN..ETA_MAX)];
            if !two.feasible(&v, &etas, 0.0) {
                continue;
            }
            let bound: f64 = two.alphas.iter().zip(&etas).map(|(a, e)| a * e).sum();
            assert!(satisfaction_probability_gmm(&two, &v) >= bound - 1e-12);
            assert!(bound >= two.delta);
            checked += 1;
        }
    }

    #[test]
    fn larger_delta_shrinks_feasible_set() {
        let cov = Matrix3::new(0.05, 0.01, 0.0, 0.01, 0.04, 0.0, 0.0, 0.0, 0.02);
        let mu = Vector3::new(0.8, 0.5, 0.0);
        let c75 = gaussian_reformulate(&mu, &cov, 0.2, 0.75).unwrap();
        let c90 = gaussian_reformulate(&mu, &cov, 0.2, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let v = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            assert!(!c90.satisfied(&v) || c75.satisfied(&v));
        }
    }

    #[test]
    fn reformulation_errors() {
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(gaussian_reformulate(&Vector3::x(), &bad, 0.0, 0.9), Err(Error::InvalidSpec(_))));
        assert!(gaussian_reformulate(&Vector3::x(), &Matrix3::zeros(), 0.0, 1.0).is_err());
    }
}
