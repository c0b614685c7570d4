//! Monte Carlo test of `∫ μ∘f_θ^{-1} dν(θ) = μ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffeoFamily, MeasureRepr};
use crate::error::{PesinError, Result};
use crate::linalg::Vector;
use crate::parallel::try_map_indexed;
use crate::rng::{lane, StreamKey};
use crate::stats::{mean, variance};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceResidual {
    /// `max_g |E g(f_θ x) - E g(x)|` over the feature family.
    pub residual: f64,
    /// Bootstrap standard error of the maximizing feature's discrepancy.
    pub se: f64,
    /// `residual / se` (0 when both vanish).
    pub z: f64,
    pub feature: usize,
    pub samples: usize,
}

const BOOTSTRAP_ROUNDS: usize = 200;

/// Gaussian bumps centred on a `3^d` grid over `mean ± std` with width `std`.
struct Features {
    centers: Vec<Vector>,
    width: Vector,
}

impl Features {
    fn from_samples(xs: &[Vector]) -> Self {
        let d = xs[0].len();
        let mut mu = Vector::zeros(d);
        let mut sd = Vector::zeros(d);
        for i in 0..d {
            let col: Vec<f64> = xs.iter().map(|x| x[i]).collect();
            mu[i] = mean(&col);
            sd[i] = variance(&col).sqrt().max(1e-6);
        }
        let count = 3usize.pow(d as u32);
        let centers = (0..count)
            .map(|mut c| {
                let mut v = mu.clone();
                for i in 0..d {
                    v[i] += ((c % 3) as f64 - 1.0) * sd[i];
                    c /= 3;
                }
                v
            })
            .collect();
        Self { centers, width: sd }
    }

    fn eval(&self, k: usize, x: &Vector) -> f64 {
        let c = &self.centers[k];
        let q: f64 = (0..x.len())
            .map(|i| {
                let t = (x[i] - c[i]) / self.width[i];
                t * t
            })
            .sum();
        (-0.5 * q).exp()
    }
}

/// Paired discrepancy `g(f_θ x) - g(x)` with `x ~ μ`, `θ ~ ν`, maximized over features.
pub fn invariance_residual<F: DiffeoFamily + ?Sized>(
    family: &F,
    mu: &MeasureRepr,
    samples: usize,
    key: StreamKey,
) -> Result<InvarianceResidual> {
    if samples < 100 {
        return Err(PesinError::InvalidInput(
            "invariance residual needs at least 100 samples".into(),
        ));
    }
    if mu.dim() != family.dim() {
        return Err(PesinError::Dimension("measure and family dimensions differ".into()));
    }
    let pairs = try_map_indexed(samples, |i| {
        let x = mu.sample(key, i as u64);
        let theta = family.sample_params(&mut key.rng(lane::OMEGA, i as u64));
        let y = family.apply(&theta, &x)?;
        Ok((x, y))
    })?;
    let xs: Vec<Vector> = pairs.iter().map(|p| p.0.clone()).collect();
    let feats = Features::from_samples(&xs);
    let diffs: Vec<Vec<f64>> = (0..feats.centers.len())
        .map(|k| {
            pairs
                .iter()
                .map(|(x, y)| feats.eval(k, y) - feats.eval(k, x))
                .collect()
        })
        .collect();
    let (feature, residual) = diffs
        .iter()
        .map(|d| mean(d).abs())
        .enumerate()
        .fold((0, -1.0), |best, (k, v)| if v > best.1 { (k, v) } else { best });

    let d = &diffs[feature];
    let mut rng = key.rng(lane::BOOTSTRAP, 0);
    let boot: Vec<f64> = (0..BOOTSTRAP_ROUNDS)
        .map(|_| {
            let s: f64 = (0..d.len()).map(|_| d[rng.random_range(0..d.len())]).sum();
            s / d.len() as f64
        })
        .collect();
    let se = variance(&boot).sqrt();
    let z = if se > 0.0 {
        residual / se
    } else if residual > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(InvarianceResidual {
        residual,
        se,
        z,
        feature,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::rds::{AffineGaussian, GaussianMeasure, LinearFamily};

    #[test]
    fn identity_family_has_zero_residual() {
        let f = LinearFamily::constant(Matrix::identity(2, 2)).unwrap();
        let mu = MeasureRepr::analytic(GaussianMeasure::standard(2));
        let r = invariance_residual(&f, &mu, 500, StreamKey::new(1, 0)).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(r.z <= 3.0);
    }

    #[test]
    fn ou_stationary_law_passes_and_wrong_law_fails() {
        let f = AffineGaussian::ou_exact(1, 1.0, 1.0, 1.0);
        let cov = f.stationary_covariance().unwrap();
        let good = MeasureRepr::analytic(GaussianMeasure::new(Vector::zeros(1), cov.clone()).unwrap());
        let r = invariance_residual(&f, &good, 20_000, StreamKey::new(2, 0)).unwrap();
        assert!(r.z <= 3.0, "{r:?}");
        let bad = MeasureRepr::analytic(GaussianMeasure::new(Vector::zeros(1), cov * 2.0).unwrap());
        let r = invariance_residual(&f, &bad, 20_000, StreamKey::new(2, 0)).unwrap();
        assert!(r.z > 5.0, "{r:?}");
    }

    #[test]
    fn too_few_samples_rejected() {
        let f = LinearFamily::constant(Matrix::identity(1, 1)).unwrap();
        let mu = MeasureRepr::analytic(GaussianMeasure::standard(1));
        assert!(invariance_residual(&f, &mu, 50, StreamKey::new(1, 0)).is_err());
    }
}
