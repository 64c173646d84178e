//! Gaussian and Gaussian-mixture noise models: sampling, expectation
//! maximization, and the distribution of ORCA plane normals.

use nalgebra::{Cholesky, DMatrix, SMatrix, SVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues down to this value are treated as rounding noise and clipped
/// to zero; anything more negative rejects the covariance.
pub const PSD_EPS: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec<const D: usize> {
    pub mean: SVector<f64, D>,
    pub cov: SMatrix<f64, D, D>,
}

/// Symmetrizes `cov` and clips tiny negative eigenvalues. Returns the
/// cleaned matrix together with a factor `L` such that `L * L^T == cov`.
fn psd_factor<const D: usize>(cov: &SMatrix<f64, D, D>) -> Result<(SMatrix<f64, D, D>, SMatrix<f64, D, D>)> {
    if cov.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidSpec("covariance has non-finite entries".into()));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    if let Some(ch) = Cholesky::new(sym) {
        return Ok((sym, ch.l()));
    }
    let eig = SymmetricEigen::new(DMatrix::from_column_slice(D, D, sym.as_slice()));
    let min = eig.eigenvalues.min();
    if min < -PSD_EPS {
        return Err(Error::InvalidSpec(format!("covariance is not PSD (min eigenvalue {min:.3e})")));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let vecs = &eig.eigenvectors;
    let dyn_factor = vecs * DMatrix::from_diagonal(&clipped.map(f64::sqrt));
    let factor = SMatrix::<f64, D, D>::from_column_slice(dyn_factor.as_slice());
    let cleaned = factor * factor.transpose();
    Ok((cleaned, factor))
}

impl<const D: usize> GaussianSpec<D> {
    pub fn new(mean: SVector<f64, D>, cov: SMatrix<f64, D, D>) -> Result<Self> {
        if mean.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSpec("mean has non-finite entries".into()));
        }
        let (cov, _) = psd_factor(&cov)?;
        Ok(Self { mean, cov })
    }

    pub fn point(mean: SVector<f64, D>) -> Self {
        Self { mean, cov: SMatrix::zeros() }
    }

    /// Matrix `L` with `L * L^T == cov` (Cholesky when definite).
    pub fn sqrt_cov(&self) -> Result<SMatrix<f64, D, D>> {
        psd_factor(&self.cov).map(|(_, l)| l)
    }

    /// Log density; fails for singular covariances.
    pub fn log_pdf(&self, x: &SVector<f64, D>) -> Result<f64> {
        let f = FactoredDensity::new(&self.cov)
            .ok_or_else(|| Error::InvalidSpec("log density needs a definite covariance".into()))?;
        Ok(f.log_pdf(&self.mean, x))
    }
}

/// Cholesky factor with its log-determinant, for repeated density evaluation.
struct FactoredDensity<const D: usize> {
    l: SMatrix<f64, D, D>,
    half_log_det: f64,
}

impl<const D: usize> FactoredDensity<D> {
    fn new(cov: &SMatrix<f64, D, D>) -> Option<Self> {
        let l = Cholesky::new(*cov)?.unpack();
        let half_log_det = (0..D).map(|i| l[(i, i)].ln()).sum();
        Some(Self { l, half_log_det })
    }

    fn log_pdf(&self, mean: &SVector<f64, D>, x: &SVector<f64, D>) -> f64 {
        let l = &self.l;
        let diff = x - mean;
        // Forward substitution on the lower factor.
        let mut z = SVector::<f64, D>::zeros();
        for i in 0..D {
            let mut acc = diff[i];
            for j in 0..i {
                acc -= l[(i, j)] * z[j];
            }
            z[i] = acc / l[(i, i)];
        }
        -0.5 * (D as f64 * LN_2PI + z.norm_squared()) - self.half_log_det
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec<const D: usize> {
    pub components: Vec<GaussianSpec<D>>,
    pub alphas: Vec<f64>,
}

impl<const D: usize> GmmSpec<D> {
    pub fn new(components: Vec<GaussianSpec<D>>, alphas: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidSpec("mixture needs at least one component".into()));
        }
        if components.len() != alphas.len() {
            return Err(Error::InvalidSpec(format!(
                "{} components but {} mixing coefficients",
                components.len(),
                alphas.len()
            )));
        }
        if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidSpec("mixing coefficients must be non-negative".into()));
        }
        let total: f64 = alphas.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("mixing coefficients sum to {total}, expected 1")));
        }
        let components = components
            .into_iter()
            .map(|c| GaussianSpec::new(c.mean, c.cov))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { components, alphas })
    }

    pub fn single(component: GaussianSpec<D>) -> Self {
        Self { components: vec![component], alphas: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Mixture mean `sum_i alpha_i mu_i`.
    pub fn mean(&self) -> SVector<f64, D> {
        self.components
            .iter()
            .zip(&self.alphas)
            .fold(SVector::zeros(), |acc, (c, a)| acc + c.mean * *a)
    }

    /// Total covariance of the mixture.
    pub fn covariance(&self) -> SMatrix<f64, D, D> {
        let mean = self.mean();
        self.components.iter().zip(&self.alphas).fold(SMatrix::zeros(), |acc, (c, a)| {
            let d = c.mean - mean;
            acc + (c.cov + d * d.transpose()) * *a
        })
    }

    /// Scales every component mean and covariance by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| GaussianSpec { mean: c.mean * factor, cov: c.cov * factor })
                .collect(),
            alphas: self.alphas.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.mean.iter().all(|x| *x == 0.0) && c.cov.iter().all(|x| *x == 0.0))
    }

    /// Mean log density over a sample set.
    pub fn mean_log_likelihood(&self, data: &SampleSet<D>) -> Result<f64> {
        let chols = self
            .components
            .iter()
            .map(|c| FactoredDensity::new(&c.cov).ok_or_else(|| Error::InvalidSpec("singular component covariance".into())))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        let mut logs = vec![0.0; self.len()];
        for x in &data.samples {
            for (k, ch) in chols.iter().enumerate() {
                logs[k] = self.alphas[k].ln() + ch.log_pdf(&self.components[k].mean, x);
            }
            total += log_sum_exp(&logs);
        }
        Ok(total / data.len() as f64)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `s` draws of a `D`-dimensional random vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<const D: usize> {
    pub samples: Vec<SVector<f64, D>>,
}

impl<const D: usize> SampleSet<D> {
    pub fn new(samples: Vec<SVector<f64, D>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("sample set is empty".into()));
        }
        if samples.iter().any(|s| s.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidArgument("sample set has non-finite rows".into()));
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        D
    }

    pub fn mean(&self) -> SVector<f64, D> {
        self.samples.iter().fold(SVector::zeros(), |acc, s| acc + s) / self.len() as f64
    }

    /// Maximum-likelihood (1/s) covariance.
    pub fn covariance(&self) -> SMatrix<f64, D, D> {
        let mean = self.mean();
        self.samples.iter().fold(SMatrix::zeros(), |acc, s| {
            let d = s - mean;
            acc + d * d.transpose()
        }) / self.len() as f64
    }
}

/// Precomputed sampling factors for a mixture.
#[derive(Debug, Clone)]
pub struct GmmSampler<const D: usize> {
    cumulative: Vec<f64>,
    means: Vec<SVector<f64, D>>,
    factors: Vec<SMatrix<f64, D, D>>,
}

impl<const D: usize> GmmSampler<D> {
    pub fn new(spec: &GmmSpec<D>) -> Result<Self> {
        let mut acc = 0.0;
        let cumulative = spec
            .alphas
            .iter()
            .map(|a| {
                acc += a;
                acc
            })
            .collect();
        let factors = spec.components.iter().map(|c| c.sqrt_cov()).collect::<Result<Vec<_>>>()?;
        Ok(Self { cumulative, means: spec.components.iter().map(|c| c.mean).collect(), factors })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SVector<f64, D> {
        let k = if self.means.len() == 1 {
            0
        } else {
            let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
            self.cumulative.iter().position(|c| u < *c).unwrap_or(self.means.len() - 1)
        };
        let z = SVector::<f64, D>::from_fn(|_, _| rng.sample(StandardNormal));
        self.means[k] + self.factors[k] * z
    }
}

/// Draws `count` i.i.d. samples: a component by `alphas`, then a Gaussian
/// draw through a square-root factor of its covariance.
pub fn sample_gmm<const D: usize, R: Rng + ?Sized>(spec: &GmmSpec<D>, count: usize, rng: &mut R) -> Result<SampleSet<D>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let sampler = GmmSampler::new(spec)?;
    SampleSet::new((0..count).map(|_| sampler.draw(rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Relative log-likelihood change that ends the iteration.
    pub tol: f64,
    /// Diagonal regularization added to every covariance.
    pub reg: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { restarts: 5, max_iters: 200, tol: 1e-7, reg: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit<const D: usize> {
    pub spec: GmmSpec<D>,
    /// Total log-likelihood of the returned parameters.
    pub log_likelihood: f64,
    /// Log-likelihood before each M-step of the winning restart.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Fits an `n`-component mixture by EM with k-means++ starts, keeping the
/// restart with the highest likelihood.
pub fn fit_gmm_em<const D: usize>(data: &SampleSet<D>, n: usize, cfg: &EmConfig) -> Result<GmmSpec<D>> {
    fit_gmm_em_detailed(data, n, cfg).map(|f| f.spec)
}

pub fn fit_gmm_em_detailed<const D: usize>(data: &SampleSet<D>, n: usize, cfg: &EmConfig) -> Result<EmFit<D>> {
    if n == 0 {
        return Err(Error::InvalidArgument("component count must be at least 1".into()));
    }
    let s = data.len();
    if n > s {
        return Err(Error::InvalidArgument(format!("{n} components requested from {s} samples")));
    }
    if s < n * (D + 1) {
        return Err(Error::InvalidArgument(format!(
            "{s} samples are too few for {n} components in {D} dimensions (need {})",
            n * (D + 1)
        )));
    }
    if !(cfg.reg >= 0.0) || !(cfg.tol >= 0.0) {
        return Err(Error::InvalidArgument("EM tolerance and regularization must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let restarts = if n == 1 { 1 } else { cfg.restarts.max(1) };
    let mut best: Option<EmFit<D>> = None;
    let mut last_err = None;
    for _ in 0..restarts {
        let resp = kmeans_pp_assignment(data, n, &mut rng);
        match run_em(data, resp, n, cfg) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::FitFailure("no restart succeeded".into())))
}

/// Hard responsibilities from k-means++ seeding (nearest seed wins).
fn kmeans_pp_assignment<const D: usize, R: Rng>(data: &SampleSet<D>, n: usize, rng: &mut R) -> Vec<f64> {
    let s = data.len();
    let mut centers = Vec::with_capacity(n);
    centers.push(data.samples[rng.random_range(0..s)]);
    let mut d2: Vec<f64> = data.samples.iter().map(|x| (x - centers[0]).norm_squared()).collect();
    while centers.len() < n {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = s - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..s)
        };
        let c = data.samples[idx];
        for (i, x) in data.samples.iter().enumerate() {
            d2[i] = d2[i].min((x - c).norm_squared());
        }
        centers.push(c);
    }
    let mut resp = vec![0.0; s * n];
    for (i, x) in data.samples.iter().enumerate() {
        let k = (0..n)
            .min_by(|&a, &b| (x - centers[a]).norm_squared().total_cmp(&(x - centers[b]).norm_squared()))
            .unwrap_or(0);
        resp[i * n + k] = 1.0;
    }
    // Seeds that captured no sample (duplicate points) get a share of the
    // farthest-assigned points so every component starts non-empty.
    for k in 0..n {
        if (0..s).all(|i| resp[i * n + k] == 0.0) {
            let i = k % s;
            resp[i * n..(i + 1) * n].iter_mut().for_each(|r| *r = 0.0);
            resp[i * n + k] = 1.0;
        }
    }
    resp
}

fn m_step<const D: usize>(data: &SampleSet<D>, resp: &[f64], n: usize, reg: f64) -> Result<GmmSpec<D>> {
    let s = data.len();
    let mut components = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    for k in 0..n {
        let nk: f64 = (0..s).map(|i| resp[i * n + k]).sum();
        if nk < 1e-10 * s as f64 {
            return Err(Error::FitFailure(format!("component {k} lost all responsibility")));
        }
        let mean = data
            .samples
            .iter()
            .enumerate()
            .fold(SVector::<f64, D>::zeros(), |acc, (i, x)| acc + x * resp[i * n + k])
            / nk;
        let mut cov = data.samples.iter().enumerate().fold(SMatrix::<f64, D, D>::zeros(), |acc, (i, x)| {
            let d = x - mean;
            acc + d * d.transpose() * resp[i * n + k]
        }) / nk;
        for j in 0..D {
            cov[(j, j)] += reg;
        }
        components.push(GaussianSpec { mean, cov: (cov + cov.transpose()) * 0.5 });
        alphas.push(nk / s as f64);
    }
    let total: f64 = alphas.iter().sum();
    alphas.iter_mut().for_each(|a| *a /= total);
    Ok(GmmSpec { components, alphas })
}

/// E-step: fills responsibilities and returns the total log-likelihood.
fn e_step<const D: usize>(data: &SampleSet<D>, spec: &GmmSpec<D>, resp: &mut [f64]) -> Result<f64> {
    let n = spec.len();
    let chols = spec
        .components
        .iter()
        .enumerate()
        .map(|(k, c)| {
            FactoredDensity::new(&c.cov).ok_or_else(|| {
                Error::FitFailure(format!("component {k} covariance is singular beyond regularization"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let log_alpha: Vec<f64> = spec.alphas.iter().map(|a| a.ln()).collect();
    let mut logs = vec![0.0; n];
    let mut total = 0.0;
    for (i, x) in data.samples.iter().enumerate() {
        for k in 0..n {
            logs[k] = log_alpha[k] + chols[k].log_pdf(&spec.components[k].mean, x);
        }
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return Err(Error::FitFailure(format!("sample {i} has non-finite likelihood")));
        }
        total += lse;
        for k in 0..n {
            resp[i * n + k] = (logs[k] - lse).exp();
        }
    }
    Ok(total)
}

fn run_em<const D: usize>(data: &SampleSet<D>, mut resp: Vec<f64>, n: usize, cfg: &EmConfig) -> Result<EmFit<D>> {
    let mut spec = m_step(data, &resp, n, cfg.reg)?;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let ll = e_step(data, &spec, &mut resp)?;
        let converged = history
            .last()
            .is_some_and(|prev: &f64| (ll - prev).abs() <= cfg.tol * prev.abs().max(1e-300));
        history.push(ll);
        if converged || iterations >= cfg.max_iters {
            return Ok(EmFit { spec, log_likelihood: ll, history, iterations });
        }
        spec = m_step(data, &resp, n, cfg.reg)?;
        iterations += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalModel {
    Gaussian,
    Gmm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NormalDistribution {
    Gaussian(GaussianSpec<3>),
    Mixture(GmmSpec<3>),
}

/// Builds the distribution of an ORCA plane normal from its samples:
/// moment matching for `Gaussian`, an `n`-component EM fit for `Gmm`.
pub fn estimate_plane_normal_distribution(
    m_samples: &SampleSet<3>,
    mode: NormalModel,
    n: usize,
    cfg: &EmConfig,
) -> Result<NormalDistribution> {
    if m_samples.len() < 2 {
        return Err(Error::InvalidArgument("at least two normal samples are required".into()));
    }
    match mode {
        NormalModel::Gaussian => {
            Ok(NormalDistribution::Gaussian(GaussianSpec::new(m_samples.mean(), m_samples.covariance())?))
        }
        NormalModel::Gmm => fit_gmm_em(m_samples, n, cfg).map(NormalDistribution::Mixture),
    }
}
