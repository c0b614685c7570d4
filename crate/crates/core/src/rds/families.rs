//! Built-in random-diffeomorphism families.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::{DerivOrder, DiffeoFamily, MapEval, Params};
use crate::error::{PesinError, Result};
use crate::linalg::{Hessian, Matrix, Vector};
use crate::poly::{PolyField, Polynomial};

fn check_dim(x: &Vector, d: usize) -> Result<()> {
    if x.len() != d {
        return Err(PesinError::Dimension(format!(
            "point has dimension {}, family has {d}",
            x.len()
        )));
    }
    Ok(())
}

fn gaussian_vector(rng: &mut dyn RngCore, d: usize) -> Vector {
    Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)))
}

/// `x -> A_k x` with `k` drawn from a finite distribution. A single matrix gives
/// a deterministic system.
#[derive(Debug, Clone)]
pub struct LinearFamily {
    mats: Vec<Matrix>,
    inverses: Vec<Matrix>,
    probs: Vec<f64>,
}

impl LinearFamily {
    pub fn new(mats: Vec<Matrix>, probs: Vec<f64>) -> Result<Self> {
        if mats.is_empty() || mats.len() != probs.len() {
            return Err(PesinError::InvalidInput(
                "need one probability per matrix".into(),
            ));
        }
        let d = mats[0].nrows();
        if mats.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(PesinError::Dimension("matrices must be square of equal size".into()));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(PesinError::InvalidInput(
                "matrix probabilities must be nonnegative and sum to 1".into(),
            ));
        }
        let inverses = mats
            .iter()
            .map(|m| m.clone().try_inverse().unwrap_or_else(|| Matrix::zeros(d, d)))
            .collect();
        Ok(Self {
            mats,
            inverses,
            probs,
        })
    }

    pub fn constant(a: Matrix) -> Result<Self> {
        Self::new(vec![a], vec![1.0])
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.mats
    }

    fn index(&self, theta: &[f64]) -> Result<usize> {
        let k = theta.first().copied().unwrap_or(0.0);
        let i = k as usize;
        if k < 0.0 || i >= self.mats.len() || i as f64 != k {
            return Err(PesinError::InvalidInput(format!("bad matrix index {k}")));
        }
        Ok(i)
    }
}

impl DiffeoFamily for LinearFamily {
    fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    fn name(&self) -> String {
        "linear".into()
    }

    fn sample_params(&self, rng: &mut dyn RngCore) -> Params {
        if self.mats.len() == 1 {
            return vec![0.0];
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return vec![i as f64];
            }
        }
        vec![(self.mats.len() - 1) as f64]
    }

    fn eval(&self, theta: &[f64], x: &Vector, order: DerivOrder) -> Result<MapEval> {
        check_dim(x, self.dim())?;
        let a = &self.mats[self.index(theta)?];
        let d = self.dim();
        Ok(MapEval {
            image: a * x,
            jacobian: (order >= DerivOrder::First).then(|| a.clone()),
            hessian: (order >= DerivOrder::Second).then(|| Hessian::zeros(d, d)),
        })
    }

    fn inverse(&self, theta: &[f64], y: &Vector) -> Result<Vector> {
        check_dim(y, self.dim())?;
        let i = self.index(theta)?;
        if self.inverses[i].iter().all(|v| *v == 0.0) {
            return Err(PesinError::Degeneracy("singular linear map".into()));
        }
        Ok(&self.inverses[i] * y)
    }

    fn param_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match (self.index(a), self.index(b)) {
            (Ok(i), Ok(j)) => (&self.mats[i] - &self.mats[j]).norm(),
            _ => f64::INFINITY,
        }
    }
}

/// `x -> A x + ξ` with `ξ = L z`, `z` standard normal.
#[derive(Debug, Clone)]
pub struct AffineGaussian {
    a: Matrix,
    a_inv: Matrix,
    noise: Matrix,
}

impl AffineGaussian {
    pub fn new(a: Matrix, noise: Matrix) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d || noise.nrows() != d {
            return Err(PesinError::Dimension("affine family shape mismatch".into()));
        }
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| PesinError::Degeneracy("singular linear part".into()))?;
        Ok(Self { a, a_inv, noise })
    }

    /// Exact time-`dt` map of `dX = -rate X dt + sigma dW` in each coordinate.
    pub fn ou_exact(d: usize, rate: f64, sigma: f64, dt: f64) -> Self {
        let decay = (-rate * dt).exp();
        let var = sigma * sigma * (1.0 - (-2.0 * rate * dt).exp()) / (2.0 * rate);
        Self::new(
            Matrix::identity(d, d) * decay,
            Matrix::identity(d, d) * var.sqrt(),
        )
        .expect("valid OU map")
    }

    pub fn linear_part(&self) -> &Matrix {
        &self.a
    }

    pub fn noise_factor(&self) -> &Matrix {
        &self.noise
    }

    /// Solution of `Σ = A Σ Aᵀ + L Lᵀ` by squaring iteration (requires spectral radius < 1).
    pub fn stationary_covariance(&self) -> Result<Matrix> {
        let mut sigma = &self.noise * self.noise.transpose();
        let mut ak = self.a.clone();
        for _ in 0..64 {
            let next = &sigma + &ak * &sigma * ak.transpose();
            ak = &ak * &ak;
            let delta = (&next - &sigma).norm();
            sigma = next;
            if delta <= 1e-15 * sigma.norm() {
                return Ok(sigma);
            }
        }
        Err(PesinError::Degeneracy(
            "linear part is not contracting; no stationary law".into(),
        ))
    }
}

impl DiffeoFamily for AffineGaussian {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn name(&self) -> String {
        "affine_gaussian".into()
    }

    fn sample_params(&self, rng: &mut dyn RngCore) -> Params {
        let z = gaussian_vector(rng, self.noise.ncols());
        (&self.noise * z).iter().copied().collect()
    }

    fn eval(&self, theta: &[f64], x: &Vector, order: DerivOrder) -> Result<MapEval> {
        check_dim(x, self.dim())?;
        let d = self.dim();
        let shift = Vector::from_column_slice(theta);
        Ok(MapEval {
            image: &self.a * x + shift,
            jacobian: (order >= DerivOrder::First).then(|| self.a.clone()),
            hessian: (order >= DerivOrder::Second).then(|| Hessian::zeros(d, d)),
        })
    }

    fn inverse(&self, theta: &[f64], y: &Vector) -> Result<Vector> {
        check_dim(y, self.dim())?;
        Ok(&self.a_inv * (y - Vector::from_column_slice(theta)))
    }

    fn inverse_jacobian(&self, _theta: &[f64], _y: &Vector) -> Result<Matrix> {
        Ok(self.a_inv.clone())
    }
}

/// One-dimensional `x -> x + c·tanh(x) + θ` with `θ ~ N(0, s²)`. A diffeomorphism for `c > -1`.
#[derive(Debug, Clone)]
pub struct GradientStep1d {
    c: f64,
    noise_std: f64,
}

impl GradientStep1d {
    pub fn new(c: f64, noise_std: f64) -> Self {
        assert!(c > -1.0, "x + c tanh x is a diffeomorphism only for c > -1");
        Self { c, noise_std }
    }
}

impl DiffeoFamily for GradientStep1d {
    fn dim(&self) -> usize {
        1
    }

    fn name(&self) -> String {
        "gradient_step_1d".into()
    }

    fn sample_params(&self, rng: &mut dyn RngCore) -> Params {
        if self.noise_std == 0.0 {
            return vec![0.0];
        }
        let z: f64 = StandardNormal.sample(rng);
        vec![self.noise_std * z]
    }

    fn eval(&self, theta: &[f64], x: &Vector, order: DerivOrder) -> Result<MapEval> {
        check_dim(x, 1)?;
        let t = x[0].tanh();
        let sech2 = 1.0 - t * t;
        let shift = theta.first().copied().unwrap_or(0.0);
        Ok(MapEval {
            image: Vector::from_element(1, x[0] + self.c * t + shift),
            jacobian: (order >= DerivOrder::First)
                .then(|| Matrix::from_element(1, 1, 1.0 + self.c * sech2)),
            hessian: (order >= DerivOrder::Second).then(|| {
                let mut h = Hessian::zeros(1, 1);
                h.set(0, 0, 0, -2.0 * self.c * t * sech2);
                h
            }),
        })
    }
}

/// Polynomial map `x -> P(x) + ξ` with optional additive Gaussian `ξ ~ N(0, s² I)`.
#[derive(Debug, Clone)]
pub struct PolynomialMap {
    field: PolyField,
    noise_std: f64,
}

impl PolynomialMap {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        Self::with_noise(components, 0.0)
    }

    pub fn with_noise(components: Vec<Polynomial>, noise_std: f64) -> Result<Self> {
        let field = PolyField::new(components)?;
        if field.dim_in() != field.dim_out() || field.dim_in() == 0 {
            return Err(PesinError::Dimension(
                "polynomial map must be a square self-map".into(),
            ));
        }
        Ok(Self { field, noise_std })
    }

    pub fn field(&self) -> &PolyField {
        &self.field
    }
}

impl DiffeoFamily for PolynomialMap {
    fn dim(&self) -> usize {
        self.field.dim_in()
    }

    fn name(&self) -> String {
        "polynomial".into()
    }

    fn sample_params(&self, rng: &mut dyn RngCore) -> Params {
        if self.noise_std == 0.0 {
            return vec![];
        }
        gaussian_vector(rng, self.dim())
            .iter()
            .map(|z| z * self.noise_std)
            .collect()
    }

    fn eval(&self, theta: &[f64], x: &Vector, order: DerivOrder) -> Result<MapEval> {
        let d = self.dim();
        check_dim(x, d)?;
        let mut image = Vector::zeros(d);
        self.field.eval_into(x.as_slice(), image.as_mut_slice());
        for (i, t) in theta.iter().enumerate().take(d) {
            image[i] += t;
        }
        let jacobian = (order >= DerivOrder::First).then(|| {
            let mut buf = vec![0.0; d * d];
            self.field.jacobian_into(x.as_slice(), &mut buf);
            Matrix::from_row_slice(d, d, &buf)
        });
        let hessian = (order >= DerivOrder::Second).then(|| {
            let mut h = Hessian::zeros(d, d);
            let mut buf = vec![0.0; d * d * d];
            self.field.hessian_into(x.as_slice(), &mut buf);
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        h.set(i, j, k, buf[(i * d + j) * d + k]);
                    }
                }
            }
            h
        });
        Ok(MapEval {
            image,
            jacobian,
            hessian,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{lane, StreamKey};
    use nalgebra::dvector;

    fn fd_jacobian<F: DiffeoFamily>(f: &F, theta: &[f64], x: &Vector) -> Matrix {
        let d = f.dim();
        let mut j = Matrix::zeros(d, d);
        for c in 0..d {
            let h = 1e-6 * (1.0 + x[c].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let col = (f.apply(theta, &xp).unwrap() - f.apply(theta, &xm).unwrap()) / (2.0 * h);
            j.set_column(c, &col);
        }
        j
    }

    fn check_family<F: DiffeoFamily>(f: &F, points: &[Vector]) {
        let key = StreamKey::new(5, 0);
        for (s, x) in points.iter().enumerate() {
            let theta = f.sample_params(&mut key.rng(lane::OMEGA, s as u64));
            let y = f.apply(&theta, x).unwrap();
            let back = f.inverse(&theta, &y).unwrap();
            assert!((&back - x).norm() <= 1e-8 * (1.0 + x.norm()), "inverse");
            let j = f.jacobian(&theta, x).unwrap();
            let fd = fd_jacobian(f, &theta, x);
            assert!((&j - &fd).norm() <= 1e-5 * (1.0 + j.norm()), "jacobian {j} vs {fd}");
            let ij = f.inverse_jacobian(&theta, &y).unwrap();
            assert!((ij * j - Matrix::identity(f.dim(), f.dim())).norm() < 1e-8);
        }
    }

    #[test]
    fn built_in_families_are_consistent() {
        let pts2 = vec![dvector![0.3, -0.4], dvector![1.2, 0.7], dvector![-2.0, 0.1]];
        let pts1 = vec![dvector![0.3], dvector![-1.7], dvector![2.5]];
        check_family(
            &LinearFamily::constant(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 3.0])).unwrap(),
            &pts2,
        );
        check_family(&AffineGaussian::ou_exact(2, 1.0, 1.0, 1.0), &pts2);
        check_family(&GradientStep1d::new(0.5, 0.3), &pts1);
        let henon_like = PolynomialMap::with_noise(
            vec![
                Polynomial::linear(2, 0, 0.5),
                Polynomial::new(2, vec![(2.0, vec![0, 1]), (-1.0, vec![2, 0])]).unwrap(),
            ],
            0.1,
        )
        .unwrap();
        check_family(&henon_like, &pts2);
    }

    #[test]
    fn ou_stationary_variance() {
        let f = AffineGaussian::ou_exact(1, 1.0, 1.0, 1.0);
        let s = f.stationary_covariance().unwrap();
        assert!((s[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn tanh_hessian_matches_finite_difference() {
        let f = GradientStep1d::new(0.7, 0.0);
        let x = dvector![0.4];
        let h = f.hessian(&[0.0], &x).unwrap().get(0, 0, 0);
        let e = 1e-5;
        let jp = f.jacobian(&[0.0], &dvector![0.4 + e]).unwrap()[(0, 0)];
        let jm = f.jacobian(&[0.0], &dvector![0.4 - e]).unwrap()[(0, 0)];
        assert!((h - (jp - jm) / (2.0 * e)).abs() < 1e-8);
    }
}
