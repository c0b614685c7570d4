//! Representations of a (candidate) invariant measure `μ`.

use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::{guard, DiffeoFamily};
use crate::error::{PesinError, Result};
use crate::linalg::{Matrix, Vector};
use crate::parallel::try_map_indexed;
use crate::rng::{lane, StreamKey};

/// A measure with a direct sampler and (optionally) a density.
pub trait AnalyticMeasure: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut dyn RngCore) -> Vector;
    fn density(&self, _x: &Vector) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: Vector,
    chol: Matrix,
    cov_inv: Matrix,
    log_norm: f64,
}

impl GaussianMeasure {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(PesinError::Dimension("covariance shape".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| PesinError::InvalidInput("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = l.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let cov_inv = chol.inverse();
        Ok(Self {
            mean,
            chol: l,
            cov_inv,
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(Vector::zeros(d), Matrix::identity(d, d)).expect("identity covariance")
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn covariance(&self) -> Matrix {
        &self.chol * self.chol.transpose()
    }
}

impl AnalyticMeasure for GaussianMeasure {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vector {
        let d = self.dim();
        let z = Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut *rng)));
        &self.mean + &self.chol * z
    }

    fn density(&self, x: &Vector) -> Option<f64> {
        let r = x - &self.mean;
        Some((self.log_norm - 0.5 * (r.transpose() * &self.cov_inv * &r)[(0, 0)]).exp())
    }
}

/// Uniform law on an axis-aligned box.
#[derive(Debug, Clone)]
pub struct UniformBox {
    lo: Vector,
    hi: Vector,
}

impl UniformBox {
    pub fn new(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(hi.iter()).any(|(a, b)| !(a < b)) {
            return Err(PesinError::InvalidInput("box needs lo < hi per axis".into()));
        }
        Ok(Self { lo, hi })
    }
}

impl AnalyticMeasure for UniformBox {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vector {
        Vector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| self.lo[i] + (self.hi[i] - self.lo[i]) * rng.random::<f64>()),
        )
    }

    fn density(&self, x: &Vector) -> Option<f64> {
        let inside = (0..self.dim()).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i]);
        let vol: f64 = (0..self.dim()).map(|i| self.hi[i] - self.lo[i]).product();
        Some(if inside { 1.0 / vol } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSpec {
    pub chains: usize,
    pub per_chain: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub min_size: usize,
}

impl Default for CloudSpec {
    fn default() -> Self {
        Self {
            chains: 16,
            per_chain: 1000,
            burn_in: 10_000,
            thinning: 10,
            min_size: 1000,
        }
    }
}

/// Point cloud from long runs of the one-point Markov chain.
#[derive(Debug, Clone)]
pub struct EmpiricalCloud {
    points: Vec<Vector>,
    spec: CloudSpec,
}

impl EmpiricalCloud {
    /// Runs `spec.chains` independent chains from `x0`, discarding `burn_in`
    /// steps and keeping every `thinning`-th state afterwards.
    pub fn simulate<F: DiffeoFamily + ?Sized>(
        family: &F,
        x0: &Vector,
        spec: CloudSpec,
        key: StreamKey,
    ) -> Result<Self> {
        if spec.chains == 0 || spec.per_chain == 0 || spec.thinning == 0 {
            return Err(PesinError::InvalidInput("cloud spec has a zero count".into()));
        }
        let chains = try_map_indexed(spec.chains, |c| {
            let ck = key.child(c as u64);
            let mut x = x0.clone();
            let total = spec.burn_in + spec.per_chain * spec.thinning;
            let mut out = Vec::with_capacity(spec.per_chain);
            for step in 0..total {
                let theta = family.sample_params(&mut ck.rng(lane::CLOUD, step as u64));
                x = family.apply(&theta, &x)?;
                guard(&x, step + 1)?;
                if step >= spec.burn_in && (step - spec.burn_in + 1).is_multiple_of(spec.thinning) {
                    out.push(x.clone());
                }
            }
            Ok(out)
        })?;
        Self::from_points(chains.into_iter().flatten().collect(), spec)
    }

    pub fn from_points(points: Vec<Vector>, spec: CloudSpec) -> Result<Self> {
        if points.len() < spec.min_size.max(1) {
            return Err(PesinError::InvalidInput(format!(
                "empirical cloud has {} points, minimum is {}",
                points.len(),
                spec.min_size
            )));
        }
        Ok(Self { points, spec })
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn spec(&self) -> CloudSpec {
        self.spec
    }
}

#[derive(Debug, Clone)]
pub enum MeasureRepr {
    Analytic(Arc<dyn AnalyticMeasure>),
    Empirical(Arc<EmpiricalCloud>),
}

impl MeasureRepr {
    pub fn analytic<M: AnalyticMeasure + 'static>(m: M) -> Self {
        Self::Analytic(Arc::new(m))
    }

    pub fn empirical(cloud: EmpiricalCloud) -> Self {
        Self::Empirical(Arc::new(cloud))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Analytic(m) => m.dim(),
            Self::Empirical(c) => c.points[0].len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Analytic(_) => "analytic-density",
            Self::Empirical(_) => "empirical-cloud",
        }
    }

    /// Sample `index` of the stream `key`; the same address always gives the same point.
    pub fn sample(&self, key: StreamKey, index: u64) -> Vector {
        let mut rng = key.rng(lane::STATE, index);
        match self {
            Self::Analytic(m) => m.sample(&mut rng),
            Self::Empirical(c) => c.points[rng.random_range(0..c.points.len())].clone(),
        }
    }

    pub fn sample_many(&self, key: StreamKey, m: usize) -> Vec<Vector> {
        crate::parallel::map_indexed(m, |i| self.sample(key, i as u64))
    }

    pub fn density(&self, x: &Vector) -> Option<f64> {
        match self {
            Self::Analytic(m) => m.density(x),
            Self::Empirical(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rds::AffineGaussian;
    use crate::stats::{mean, variance};

    #[test]
    fn gaussian_density_normalized_in_1d() {
        let g = GaussianMeasure::standard(1);
        let s: f64 = (-800..=800)
            .map(|i| g.density(&Vector::from_element(1, i as f64 * 0.01)).unwrap() * 0.01)
            .sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cloud_of_ou_has_stationary_variance() {
        let f = AffineGaussian::ou_exact(1, 1.0, 1.0, 1.0);
        let spec = CloudSpec {
            chains: 8,
            per_chain: 1000,
            burn_in: 100,
            thinning: 2,
            min_size: 1000,
        };
        let c = EmpiricalCloud::simulate(&f, &Vector::zeros(1), spec, StreamKey::new(1, 0)).unwrap();
        let xs: Vec<f64> = c.points().iter().map(|p| p[0]).collect();
        assert_eq!(xs.len(), 8000);
        assert!(mean(&xs).abs() < 0.05);
        assert!((variance(&xs) - 0.5).abs() < 0.05);
    }

    #[test]
    fn undersized_cloud_rejected() {
        let spec = CloudSpec {
            min_size: 10,
            ..CloudSpec::default()
        };
        assert!(EmpiricalCloud::from_points(vec![Vector::zeros(1); 3], spec).is_err());
    }
}
