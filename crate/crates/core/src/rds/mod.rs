//! Random-diffeomorphism cocycles on R^d.
//!
//! A [`DiffeoFamily`] is a parameterized family `θ -> f_θ` together with a
//! sampler for the parameter law. A realization `ω = (f_0, f_1, ...)` is an
//! [`OmegaPrefix`] of parameter records. Tangent spaces are identified with
//! R^d and the exponential map at `y` is translation by `y`.

mod families;
mod invariance;
mod measure;

use std::sync::Arc;

use rand::RngCore;

pub use families::{AffineGaussian, GradientStep1d, LinearFamily, PolynomialMap};
pub use invariance::{invariance_residual, InvarianceResidual};
pub use measure::{AnalyticMeasure, CloudSpec, EmpiricalCloud, GaussianMeasure, MeasureRepr, UniformBox};

use crate::error::{PesinError, Result};
use crate::linalg::{all_finite, Hessian, Matrix, Vector};
use crate::rng::{lane, StreamKey};

/// Coordinates beyond this magnitude abort the computation.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Jacobian factors with `|det|` below this are treated as singular.
pub const SINGULAR_DET: f64 = 1e-300;

pub type Params = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivOrder {
    Value,
    First,
    Second,
}

#[derive(Debug, Clone)]
pub struct MapEval {
    pub image: Vector,
    pub jacobian: Option<Matrix>,
    pub hessian: Option<Hessian>,
}

/// A parameterized family of C² diffeomorphisms with a parameter law `ν`.
pub trait DiffeoFamily: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String {
        "custom".to_string()
    }

    /// Draws one parameter record from `ν`.
    fn sample_params(&self, rng: &mut dyn RngCore) -> Params;

    /// Image and, on request, first and second derivatives at `x`.
    fn eval(&self, theta: &[f64], x: &Vector, order: DerivOrder) -> Result<MapEval>;

    fn has_hessian(&self) -> bool {
        true
    }

    fn apply(&self, theta: &[f64], x: &Vector) -> Result<Vector> {
        Ok(self.eval(theta, x, DerivOrder::Value)?.image)
    }

    fn jacobian(&self, theta: &[f64], x: &Vector) -> Result<Matrix> {
        self.eval(theta, x, DerivOrder::First)?
            .jacobian
            .ok_or_else(|| PesinError::Capability("jacobian".into()))
    }

    fn hessian(&self, theta: &[f64], x: &Vector) -> Result<Hessian> {
        if !self.has_hessian() {
            return Err(PesinError::Capability(format!(
                "family {} has no second derivative",
                self.name()
            )));
        }
        self.eval(theta, x, DerivOrder::Second)?
            .hessian
            .ok_or_else(|| PesinError::Capability("hessian".into()))
    }

    /// `f_θ^{-1}(y)`. The default runs Newton's method from `y`.
    fn inverse(&self, theta: &[f64], y: &Vector) -> Result<Vector> {
        newton_inverse(self, theta, y, y.clone())
    }

    /// `D_y f_θ^{-1}`.
    fn inverse_jacobian(&self, theta: &[f64], y: &Vector) -> Result<Matrix> {
        let x = self.inverse(theta, y)?;
        let j = self.jacobian(theta, &x)?;
        j.try_inverse()
            .ok_or_else(|| PesinError::Degeneracy("singular jacobian in inverse".into()))
    }

    /// Surrogate distance between two maps of the family, measured in parameter space.
    fn param_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Solves `f_θ(x) = y` by damped Newton iteration from `guess`.
pub fn newton_inverse<F: DiffeoFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    y: &Vector,
    guess: Vector,
) -> Result<Vector> {
    let mut x = guess;
    let scale = 1.0 + y.amax();
    let mut resid = family.apply(theta, &x)? - y;
    for _ in 0..100 {
        let r = resid.norm();
        if r <= 1e-13 * scale {
            return Ok(x);
        }
        let j = family.jacobian(theta, &x)?;
        let step = j
            .lu()
            .solve(&resid)
            .ok_or_else(|| PesinError::Degeneracy("singular jacobian in Newton inverse".into()))?;
        let mut t = 1.0;
        loop {
            let cand = &x - &step * t;
            let cr = family.apply(theta, &cand).map(|v| v - y);
            if let Ok(cr) = cr {
                if cr.norm() < r || t < 1e-6 {
                    x = cand;
                    resid = cr;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-6 {
                if r <= 1e-9 * scale {
                    return Ok(x);
                }
                return Err(PesinError::Degeneracy("Newton inverse stalled".into()));
            }
        }
    }
    if resid.norm() <= 1e-9 * scale {
        Ok(x)
    } else {
        Err(PesinError::Degeneracy(format!(
            "Newton inverse did not converge (residual {:.3e})",
            resid.norm()
        )))
    }
}

impl<T: DiffeoFamily + ?Sized> DiffeoFamily for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn sample_params(&self, rng: &mut dyn RngCore) -> Params {
        (**self).sample_params(rng)
    }
    fn eval(&self, theta: &[f64], x: &Vector, order: DerivOrder) -> Result<MapEval> {
        (**self).eval(theta, x, order)
    }
    fn has_hessian(&self) -> bool {
        (**self).has_hessian()
    }
    fn inverse(&self, theta: &[f64], y: &Vector) -> Result<Vector> {
        (**self).inverse(theta, y)
    }
    fn inverse_jacobian(&self, theta: &[f64], y: &Vector) -> Result<Matrix> {
        (**self).inverse_jacobian(theta, y)
    }
    fn param_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (**self).param_distance(a, b)
    }
}

#[derive(Debug, Clone)]
enum OmegaSource {
    Explicit(Arc<Vec<Params>>),
    Keyed(StreamKey),
}

/// Finite prefix `(θ_0, ..., θ_{n-1})` of a noise realization.
///
/// Keyed prefixes regenerate record `k` from the stream `(key, k)`, so the same
/// key always yields the same records regardless of access order.
#[derive(Debug, Clone)]
pub struct OmegaPrefix {
    source: OmegaSource,
    offset: usize,
    len: usize,
}

impl OmegaPrefix {
    pub fn explicit(records: Vec<Params>) -> Self {
        let len = records.len();
        Self {
            source: OmegaSource::Explicit(Arc::new(records)),
            offset: 0,
            len,
        }
    }

    pub fn keyed(key: StreamKey, len: usize) -> Self {
        Self {
            source: OmegaSource::Keyed(key),
            offset: 0,
            len,
        }
    }

    /// `n` copies of the same record (a deterministic system).
    pub fn constant(record: Params, len: usize) -> Self {
        Self::explicit(vec![record; len])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn key(&self) -> Option<StreamKey> {
        match &self.source {
            OmegaSource::Keyed(k) => Some(*k),
            OmegaSource::Explicit(_) => None,
        }
    }

    pub fn record<F: DiffeoFamily + ?Sized>(&self, family: &F, k: usize) -> Params {
        assert!(k < self.len, "record {k} beyond prefix length {}", self.len);
        let abs = self.offset + k;
        match &self.source {
            OmegaSource::Explicit(v) => v[abs].clone(),
            OmegaSource::Keyed(key) => family.sample_params(&mut key.rng(lane::OMEGA, abs as u64)),
        }
    }

    /// The left shift `τ^k ω`.
    pub fn shift(&self, k: usize) -> OmegaPrefix {
        let k = k.min(self.len);
        Self {
            source: self.source.clone(),
            offset: self.offset + k,
            len: self.len - k,
        }
    }

    pub fn truncate(&self, n: usize) -> OmegaPrefix {
        Self {
            len: n.min(self.len),
            ..self.clone()
        }
    }

    /// Explicit copy of the records, for repeated access.
    pub fn materialize<F: DiffeoFamily + ?Sized>(&self, family: &F) -> OmegaPrefix {
        match &self.source {
            OmegaSource::Explicit(_) => self.clone(),
            OmegaSource::Keyed(_) => {
                OmegaPrefix::explicit((0..self.len).map(|k| self.record(family, k)).collect())
            }
        }
    }
}

fn check_len(omega: &OmegaPrefix, n: usize) -> Result<()> {
    if n > omega.len() {
        return Err(PesinError::InvalidInput(format!(
            "requested {n} steps from a prefix of length {}",
            omega.len()
        )));
    }
    Ok(())
}

pub(crate) fn guard(x: &Vector, step: usize) -> Result<()> {
    if !all_finite(x) || x.amax() > DIVERGENCE_BOUND {
        return Err(PesinError::Divergence {
            step,
            detail: format!("state magnitude {:.3e}", x.amax()),
        });
    }
    Ok(())
}

/// Trajectory `(x, f^1_ω x, ..., f^n_ω x)`.
pub fn compose<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    n: usize,
) -> Result<Vec<Vector>> {
    check_len(omega, n)?;
    guard(x, 0)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(x.clone());
    for k in 0..n {
        let theta = omega.record(family, k);
        let next = family.apply(&theta, &out[k])?;
        guard(&next, k + 1)?;
        out.push(next);
    }
    Ok(out)
}

/// Trajectory together with the derivative factors `D_{f^k x} f_{θ_k}`.
#[derive(Debug, Clone)]
pub struct Orbit {
    pub points: Vec<Vector>,
    pub jacobians: Vec<Matrix>,
}

pub fn orbit_with_jacobians<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    n: usize,
) -> Result<Orbit> {
    check_len(omega, n)?;
    guard(x, 0)?;
    let mut points = Vec::with_capacity(n + 1);
    let mut jacobians = Vec::with_capacity(n);
    points.push(x.clone());
    for k in 0..n {
        let theta = omega.record(family, k);
        let ev = family.eval(&theta, &points[k], DerivOrder::First)?;
        let j = ev
            .jacobian
            .ok_or_else(|| PesinError::Capability("jacobian".into()))?;
        if j.determinant().abs() < SINGULAR_DET {
            return Err(PesinError::Degeneracy(format!(
                "singular jacobian factor at step {k}"
            )));
        }
        guard(&ev.image, k + 1)?;
        points.push(ev.image);
        jacobians.push(j);
    }
    Ok(Orbit { points, jacobians })
}

/// Ordered derivative factors `[D_{f^k_ω x} f_{θ_k}]_{k<n}`.
pub fn jacobian_cocycle<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    n: usize,
) -> Result<Vec<Matrix>> {
    Ok(orbit_with_jacobians(family, omega, x, n)?.jacobians)
}

/// `factors[n-1] · ... · factors[0]`, i.e. `D_x f^n_ω`.
pub fn cocycle_product(factors: &[Matrix], dim: usize) -> Matrix {
    factors
        .iter()
        .fold(Matrix::identity(dim, dim), |acc, j| j * acc)
}

/// The map `F_{(ω,x),n}(ξ) = f_{θ_n}(f^n_ω x + ξ) - f^{n+1}_ω x` on tangent vectors.
#[derive(Debug, Clone)]
pub struct CenteredMap {
    pub theta: Params,
    pub base: Vector,
    pub image: Vector,
}

impl CenteredMap {
    pub fn at<F: DiffeoFamily + ?Sized>(
        family: &F,
        omega: &OmegaPrefix,
        x: &Vector,
        n: usize,
    ) -> Result<Self> {
        if n >= omega.len() {
            return Err(PesinError::InvalidInput(format!(
                "centered map at level {n} needs a prefix longer than {}",
                omega.len()
            )));
        }
        let traj = compose(family, omega, x, n)?;
        let base = traj[n].clone();
        let theta = omega.record(family, n);
        let image = family.apply(&theta, &base)?;
        guard(&image, n + 1)?;
        Ok(Self { theta, base, image })
    }

    pub fn apply<F: DiffeoFamily + ?Sized>(&self, family: &F, xi: &Vector) -> Result<Vector> {
        Ok(family.apply(&self.theta, &(&self.base + xi))? - &self.image)
    }

    pub fn jacobian<F: DiffeoFamily + ?Sized>(&self, family: &F, xi: &Vector) -> Result<Matrix> {
        family.jacobian(&self.theta, &(&self.base + xi))
    }

    pub fn hessian<F: DiffeoFamily + ?Sized>(&self, family: &F, xi: &Vector) -> Result<Hessian> {
        family.hessian(&self.theta, &(&self.base + xi))
    }
}

pub fn centered_map<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    n: usize,
    xi: &Vector,
) -> Result<Vector> {
    CenteredMap::at(family, omega, x, n)?.apply(family, xi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirkhoffAverage {
    /// `(1/n) Σ_{k<n} g(F^k(ω, x))`
    pub mean: f64,
    /// `(1/n) g(F^n(ω, x))`
    pub tail: f64,
}

/// Birkhoff average of an observable `g(θ_0, x)` on the skew product.
///
/// Needs `n + 1` records so the tail term can be evaluated.
pub fn birkhoff_average<F, G>(
    g: G,
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    n: usize,
) -> Result<BirkhoffAverage>
where
    F: DiffeoFamily + ?Sized,
    G: Fn(&[f64], &Vector) -> Result<f64>,
{
    if n == 0 {
        return Err(PesinError::InvalidInput("n must be >= 1".into()));
    }
    check_len(omega, n + 1)?;
    let mut state = x.clone();
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let theta = omega.record(family, k);
        terms.push(g(&theta, &state)?);
        state = family.apply(&theta, &state)?;
        guard(&state, k + 1)?;
    }
    let theta = omega.record(family, n);
    let tail = g(&theta, &state)? / n as f64;
    Ok(BirkhoffAverage {
        mean: crate::stats::mean(&terms),
        tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn scalar_linear(factors: &[f64]) -> LinearFamily {
        LinearFamily::new(
            factors
                .iter()
                .map(|&a| Matrix::from_element(1, 1, a))
                .collect(),
            vec![1.0 / factors.len() as f64; factors.len()],
        )
        .unwrap()
    }

    #[test]
    fn identity_family_constant_trajectory() {
        let fam = LinearFamily::constant(Matrix::identity(2, 2)).unwrap();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 5);
        let x = dvector![0.3, -1.0];
        let traj = compose(&fam, &omega, &x, 5).unwrap();
        assert!(traj.iter().all(|p| p == &x));
        let jac = jacobian_cocycle(&fam, &omega, &x, 5).unwrap();
        assert!(jac.iter().all(|j| j == &Matrix::identity(2, 2)));
    }

    #[test]
    fn geometric_contraction() {
        let fam = LinearFamily::constant(Matrix::from_element(1, 1, 0.5)).unwrap();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 3);
        let traj = compose(&fam, &omega, &dvector![1.0], 3).unwrap();
        let v: Vec<f64> = traj.iter().map(|p| p[0]).collect();
        assert_eq!(v, vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn explicit_scalar_records() {
        let fam = scalar_linear(&[2.0, 0.5]);
        let omega = OmegaPrefix::explicit(vec![vec![0.0], vec![1.0]]);
        let traj = compose(&fam, &omega, &dvector![1.0], 2).unwrap();
        assert_eq!(traj[2][0], 1.0);
    }

    #[test]
    fn constant_cocycle_power() {
        let a = Matrix::from_diagonal(&dvector![2.0, 0.5]);
        let fam = LinearFamily::constant(a).unwrap();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 4);
        let f = jacobian_cocycle(&fam, &omega, &dvector![1.0, 1.0], 4).unwrap();
        let p = cocycle_product(&f, 2);
        assert_eq!(p, Matrix::from_diagonal(&dvector![16.0, 1.0 / 16.0]));
    }

    #[test]
    fn tanh_factor_at_origin() {
        let fam = GradientStep1d::new(0.1, 0.0);
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 1);
        let f = jacobian_cocycle(&fam, &omega, &dvector![0.0], 1).unwrap();
        assert!((f[0][(0, 0)] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn centered_map_examples() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]);
        let fam = LinearFamily::constant(a.clone()).unwrap();
        let omega = OmegaPrefix::keyed(StreamKey::new(3, 0), 4);
        let x = dvector![0.7, -0.2];
        let z = centered_map(&fam, &omega, &x, 2, &dvector![0.0, 0.0]).unwrap();
        assert_eq!(z, dvector![0.0, 0.0]);
        let xi = dvector![0.1, 0.4];
        let v = centered_map(&fam, &omega, &x, 2, &xi).unwrap();
        assert!((v - &a * &xi).norm() < 1e-14);

        // f(x) = x^2 at x = 1, ξ = 0.1
        let sq = PolynomialMap::new(vec![crate::poly::Polynomial::new(1, vec![(1.0, vec![2])]).unwrap()])
            .unwrap();
        let om = OmegaPrefix::constant(vec![], 1);
        let v = centered_map(&sq, &om, &dvector![1.0], 0, &dvector![0.1]).unwrap();
        assert!((v[0] - 0.21).abs() < 1e-14);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let fam = LinearFamily::constant(Matrix::from_element(1, 1, 1e5)).unwrap();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 10);
        match compose(&fam, &omega, &dvector![1.0], 10) {
            Err(PesinError::Divergence { step, .. }) => assert_eq!(step, 3),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn singular_factor_is_degenerate() {
        let fam = LinearFamily::constant(Matrix::zeros(2, 2)).unwrap();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 1);
        assert!(matches!(
            jacobian_cocycle(&fam, &omega, &dvector![1.0, 0.0], 1),
            Err(PesinError::Degeneracy(_))
        ));
    }

    #[test]
    fn birkhoff_examples() {
        let fam = LinearFamily::constant(Matrix::from_element(1, 1, 0.25)).unwrap();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 11);
        let x = dvector![2.0];
        let c = birkhoff_average(|_, _| Ok(3.5), &fam, &omega, &x, 10).unwrap();
        assert_eq!(c.mean, 3.5);
        let lg = birkhoff_average(
            |th, p| Ok(fam.jacobian(th, p)?[(0, 0)].abs().ln()),
            &fam,
            &omega,
            &x,
            10,
        )
        .unwrap();
        assert!((lg.mean - 0.25f64.ln()).abs() < 1e-15);

        let ou = AffineGaussian::ou_exact(1, 1.0, 1.0, 1.0);
        let omega = OmegaPrefix::keyed(StreamKey::new(9, 0), 201);
        let b = birkhoff_average(
            |th, p| Ok(ou.jacobian(th, p)?[(0, 0)].abs().ln()),
            &ou,
            &omega,
            &dvector![0.4],
            200,
        )
        .unwrap();
        assert!((b.mean + 1.0).abs() < 1e-12);
    }

    #[test]
    fn keyed_prefix_is_reproducible_and_shiftable() {
        let fam = AffineGaussian::ou_exact(2, 1.0, 1.0, 1.0);
        let key = StreamKey::new(42, 7);
        let a = OmegaPrefix::keyed(key, 6);
        let b = OmegaPrefix::keyed(key, 6);
        for k in 0..6 {
            assert_eq!(a.record(&fam, k), b.record(&fam, k));
        }
        let s = a.shift(2);
        assert_eq!(s.len(), 4);
        assert_eq!(s.record(&fam, 0), a.record(&fam, 2));
        let m = a.materialize(&fam);
        assert_eq!(m.record(&fam, 5), a.record(&fam, 5));
    }
}
