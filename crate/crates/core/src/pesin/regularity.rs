//! The functions `r(ω, x)` and `C_δ(ω, x)` along an orbit.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PesinError, Result};
use crate::linalg::{op_norm, Hessian, Vector};
use crate::rds::{compose, orbit_with_jacobians, DiffeoFamily, OmegaPrefix};
use crate::rng::{lane, StreamKey};

/// Random points added to the deterministic ball grid.
pub const BALL_SAMPLES: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct REstimate {
    /// `r = max_{n ≤ N} r′(F^n(ω, x)) e^{−εn}`.
    pub r: f64,
    /// `r′(F^n(ω, x))` for `n = 0..=N`.
    pub r_prime: Vec<f64>,
    /// Forward term `sup |D²F|` per level.
    pub forward: Vec<f64>,
    /// Inverse term `sup |D²F^{-1}|` per level.
    pub inverse: Vec<f64>,
    /// `r(F^m) ≤ r e^{εm}` on the truncated suffix sups.
    pub certificate_ii: bool,
    pub eps: f64,
}

/// Radius of the outermost grid points; the ball is open.
const OPEN_EDGE: f64 = 0.999;

/// Points of the open unit ball: center, `±0.999 e_i`, `±e_i/2`, and keyed random points.
fn ball_points(d: usize, key: StreamKey, level: usize, extra: usize) -> Vec<Vector> {
    let mut pts = vec![Vector::zeros(d)];
    for i in 0..d {
        for s in [OPEN_EDGE, -OPEN_EDGE, 0.5, -0.5] {
            let mut v = Vector::zeros(d);
            v[i] = s;
            pts.push(v);
        }
    }
    let mut rng = key.rng(lane::PROBE, level as u64);
    for _ in 0..extra {
        let g = Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
        let u: f64 = rand::Rng::random(&mut rng);
        let n = g.norm();
        if n > 0.0 {
            pts.push(g * (OPEN_EDGE * u.powf(1.0 / d as f64) / n));
        }
    }
    pts
}

/// `(sup |D²F|, sup |D²F^{-1}|)` of the centered map at `base` over sampled ball points.
///
/// The inverse term is evaluated at the images `F(ξ)` through
/// `D²f^{-1}(f(z)) = −Df(z)^{-1} D²f(z)[Df(z)^{-1}·, Df(z)^{-1}·]`.
pub fn second_derivative_sups<F: DiffeoFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    base: &Vector,
    points: &[Vector],
) -> Result<(f64, f64)> {
    let (mut fwd, mut inv): (f64, f64) = (0.0, 0.0);
    for xi in points {
        let z = base + xi;
        let ev = family.eval(theta, &z, crate::rds::DerivOrder::Second)?;
        let hess = ev
            .hessian
            .ok_or_else(|| PesinError::Capability("second derivative".into()))?;
        let jac = ev
            .jacobian
            .ok_or_else(|| PesinError::Capability("first derivative".into()))?;
        fwd = fwd.max(hess.norm());
        if !hess.is_zero() {
            let jinv = jac
                .try_inverse()
                .ok_or_else(|| PesinError::Degeneracy("singular derivative inside the unit ball".into()))?;
            inv = inv.max(Hessian::of_inverse(&jinv, &hess).norm());
        }
    }
    Ok((fwd, inv))
}

/// `r(ω, x)` from the Hessians of `F_{(ω,x),n}` and their inverses on the unit ball.
pub fn estimate_r<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    eps: f64,
    horizon: usize,
    key: StreamKey,
) -> Result<REstimate> {
    if !family.has_hessian() {
        return Err(PesinError::Capability(format!(
            "family `{}` provides no second derivative",
            family.name()
        )));
    }
    if horizon + 1 > omega.len() {
        return Err(PesinError::InvalidInput(format!(
            "r over {horizon} steps needs {} noise records",
            horizon + 1
        )));
    }
    let d = family.dim();
    let traj = compose(family, omega, x, horizon)?;
    let sups = crate::parallel::try_map_indexed(horizon + 1, |n| {
        let theta = omega.record(family, n);
        let pts = ball_points(d, key, n, BALL_SAMPLES);
        second_derivative_sups(family, &theta, &traj[n], &pts)
    })?;
    let forward: Vec<f64> = sups.iter().map(|s| s.0).collect();
    let inverse: Vec<f64> = sups.iter().map(|s| s.1).collect();
    let r_prime: Vec<f64> = sups.iter().map(|s| s.0.max(s.1)).collect();
    let weighted = |from: usize| {
        (from..=horizon)
            .map(|n| r_prime[n] * (-eps * (n - from) as f64).exp())
            .fold(0.0, f64::max)
    };
    let r = weighted(0);
    let certificate_ii =
        (0..=horizon).all(|m| weighted(m) <= r * (eps * m as f64).exp() * (1.0 + 1e-12));
    Ok(REstimate {
        r,
        r_prime,
        forward,
        inverse,
        certificate_ii,
        eps,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CDeltaEstimate {
    /// `C_δ = max_{n ≤ N} |D_0 F^{-1}_{(ω,x),n}| e^{−δn}`.
    pub c_delta: f64,
    /// `|D_0 F^{-1}_{(ω,x),n}|` per level.
    pub inverse_norms: Vec<f64>,
    pub delta: f64,
}

/// Empirical `C_δ` over the horizon; the bound `|D_0F^{-1}_n| ≤ C_δ e^{δn}` then
/// holds on every sampled level by construction.
pub fn estimate_c_delta<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    delta: f64,
    horizon: usize,
) -> Result<CDeltaEstimate> {
    let orbit = orbit_with_jacobians(family, omega, x, horizon)?;
    let inverse_norms = orbit
        .jacobians
        .iter()
        .map(|j| {
            j.clone()
                .try_inverse()
                .map(|m| op_norm(&m))
                .ok_or_else(|| PesinError::Degeneracy("singular factor".into()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let c_delta = inverse_norms
        .iter()
        .enumerate()
        .map(|(n, v)| v * (-delta * n as f64).exp())
        .fold(0.0, f64::max);
    Ok(CDeltaEstimate {
        c_delta,
        inverse_norms,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::poly::Polynomial;
    use crate::rds::{LinearFamily, PolynomialMap};
    use nalgebra::dvector;

    #[test]
    fn linear_family_has_zero_r() {
        let fam = LinearFamily::constant(Matrix::from_diagonal(&dvector![2.0, 0.5])).unwrap();
        let omega = OmegaPrefix::constant(vec![0.0], 11);
        let r = estimate_r(&fam, &omega, &dvector![0.0, 0.0], 0.01, 10, StreamKey::new(1, 0)).unwrap();
        assert_eq!(r.r, 0.0);
        assert!(r.certificate_ii);
    }

    #[test]
    fn quadratic_map_forward_term() {
        // f(x) = x + x²/2 at 0
        let f = Polynomial::new(1, vec![(1.0, vec![1]), (0.5, vec![2])]).unwrap();
        let fam = PolynomialMap::new(vec![f]).unwrap();
        let omega = OmegaPrefix::constant(vec![], 1);
        let r = estimate_r(&fam, &omega, &dvector![0.0], 0.1, 0, StreamKey::new(1, 0)).unwrap();
        assert!((r.forward[0] - 1.0).abs() < 1e-12);
        // the inverse term (1+ξ)^{-3} blows up toward ξ = -1
        assert!(r.inverse[0] > 1e8);
        assert_eq!(r.r, r.inverse[0]);
    }

    #[test]
    fn r_is_nonincreasing_in_eps() {
        let f = Polynomial::new(1, vec![(0.5, vec![1]), (0.1, vec![3])]).unwrap();
        let fam = PolynomialMap::new(vec![f]).unwrap();
        let omega = OmegaPrefix::constant(vec![], 6);
        let x = dvector![0.5];
        let key = StreamKey::new(4, 0);
        let small = estimate_r(&fam, &omega, &x, 0.01, 5, key).unwrap();
        let large = estimate_r(&fam, &omega, &x, 0.2, 5, key).unwrap();
        assert!(large.r <= small.r);
        assert!(small.certificate_ii && large.certificate_ii);
    }

    #[test]
    fn c_delta_bounds_every_level() {
        let fam = LinearFamily::constant(Matrix::from_diagonal(&dvector![2.0, 0.5])).unwrap();
        let omega = OmegaPrefix::constant(vec![0.0], 20);
        let c = estimate_c_delta(&fam, &omega, &dvector![0.0, 0.0], 0.1, 20).unwrap();
        assert!((c.c_delta - 2.0).abs() < 1e-12);
        for (n, v) in c.inverse_norms.iter().enumerate() {
            assert!(*v <= c.c_delta * (0.1 * n as f64).exp());
        }
    }
}
