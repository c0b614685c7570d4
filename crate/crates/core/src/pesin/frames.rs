//! Stable/unstable frames along an orbit and the function `l(ω, x, n)`.

use serde::{Deserialize, Serialize};

use super::params::PesinParams;
use crate::error::{PesinError, Result};
use crate::linalg::{co_norm, complement, op_norm, orthonormalize, principal_angle, Matrix, Vector};
use crate::oseledets::{growth_frame, stable_filtration, DEFAULT_CLUSTER_GAP};
use crate::rds::{orbit_with_jacobians, DiffeoFamily, OmegaPrefix};

/// Horizons shorter than this are flagged: the supremum over `l` sees too few terms.
pub const SHORT_HORIZON: usize = 10;

/// Derivative factors along an orbit with the splitting `E_n ⊕ H_n` at every level.
///
/// `E_n` is the slow subspace of `D f^{N-n}` at `f^n x` (so it is computed from
/// the future of the orbit, which is numerically stable); `H_n` is the
/// push-forward of `H_0 = E_0^⊥`.
#[derive(Debug, Clone)]
pub struct OrbitFrames {
    pub points: Vec<Vector>,
    pub factors: Vec<Matrix>,
    pub e: Vec<Matrix>,
    pub h: Vec<Matrix>,
    /// Oblique projector onto `E_n` along `H_n`.
    pub proj_e: Vec<Matrix>,
}

impl OrbitFrames {
    /// Frames for the orbit of `x` over `horizon` steps, with `E_0` the
    /// filtration subspace of rates below `a` (cluster gap default).
    pub fn along_orbit<F: DiffeoFamily + ?Sized>(
        family: &F,
        omega: &OmegaPrefix,
        x: &Vector,
        horizon: usize,
        a: f64,
    ) -> Result<Self> {
        let filt = stable_filtration(family, omega, x, horizon, a, DEFAULT_CLUSTER_GAP)?;
        let orbit = orbit_with_jacobians(family, omega, x, horizon)?;
        Self::from_factors(orbit.points, orbit.jacobians, filt.e)
    }

    /// Frames from explicit factors and an orthonormal basis of `E_0`.
    pub fn from_factors(points: Vec<Vector>, factors: Vec<Matrix>, e0: Matrix) -> Result<Self> {
        let n = factors.len();
        let d = e0.nrows();
        let k = e0.ncols();
        if points.len() != n + 1 || factors.iter().any(|j| j.shape() != (d, d)) {
            return Err(PesinError::Dimension("factors, points and basis disagree".into()));
        }
        let e0 = orthonormalize(&e0)?;
        let mut e = Vec::with_capacity(n + 1);
        e.push(e0.clone());
        for lev in 1..=n {
            let pushed = orthonormalize(&(&factors[lev - 1] * &e[lev - 1]))?;
            if lev < n && k > 0 && k < d {
                let (frame, _) = growth_frame(&factors[lev..], d)?;
                e.push(frame.columns(d - k, k).into_owned());
            } else {
                e.push(pushed);
            }
        }
        let mut h = Vec::with_capacity(n + 1);
        h.push(complement(&e0, d));
        for lev in 1..=n {
            h.push(orthonormalize(&(&factors[lev - 1] * &h[lev - 1]))?);
        }
        let proj_e = e
            .iter()
            .zip(&h)
            .map(|(eb, hb)| {
                let mut joined = Matrix::zeros(d, d);
                joined.columns_mut(0, k).copy_from(eb);
                joined.columns_mut(k, d - k).copy_from(hb);
                let inv = joined
                    .try_inverse()
                    .ok_or_else(|| PesinError::Degeneracy("E_n and H_n do not span".into()))?;
                Ok(eb * inv.rows(0, k))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points,
            factors,
            e,
            h,
            proj_e,
        })
    }

    pub fn horizon(&self) -> usize {
        self.factors.len()
    }

    pub fn dim(&self) -> usize {
        self.e[0].nrows()
    }

    pub fn stable_dim(&self) -> usize {
        self.e[0].ncols()
    }

    /// Angle `γ(E_n, H_n)` in radians.
    pub fn angle(&self, n: usize) -> f64 {
        principal_angle(&self.e[n], &self.h[n])
    }
}

/// Product of factors applied to a basis, kept as `exp(log_scale) · m` to avoid overflow.
#[derive(Debug, Clone)]
pub(crate) struct ScaledBasis {
    pub m: Matrix,
    pub log_scale: f64,
}

impl ScaledBasis {
    pub fn new(m: Matrix) -> Self {
        Self { m, log_scale: 0.0 }
    }

    pub fn push(&mut self, j: &Matrix) {
        self.m = j * &self.m;
        let s = self.m.amax();
        if s > 0.0 && s.is_finite() {
            self.m /= s;
            self.log_scale += s.ln();
        }
    }

    /// Applies `j` and then the projector `proj`; used for `E`, whose
    /// push-forward would otherwise pick up round-off in expanding directions.
    pub fn push_projected(&mut self, j: &Matrix, proj: &Matrix) {
        self.push(&(proj * j));
    }

    pub fn log_norm(&self) -> f64 {
        op_norm(&self.m).ln() + self.log_scale
    }

    pub fn log_conorm(&self) -> f64 {
        co_norm(&self.m).ln() + self.log_scale
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LEstimate {
    /// Smallest `l ≥ 1` meeting conditions i)–iii) at `n = 0`.
    pub l: f64,
    /// Per-level minimal values for i)–iii).
    pub raw: Vec<f64>,
    /// `l̂(n) = max_{m ≥ n} raw(m) e^{−ε(m−n)}`: dominates `raw` and satisfies iv).
    pub table: Vec<f64>,
    pub raw_satisfies_iv: bool,
    pub table_satisfies_iv: bool,
    pub short_horizon: bool,
    pub horizon: usize,
    pub stable_dim: usize,
}

/// `l(ω, x, ·)` over the sampled orbit segment.
pub fn estimate_l<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    p: &PesinParams,
    horizon: usize,
) -> Result<LEstimate> {
    let frames = OrbitFrames::along_orbit(family, omega, x, horizon, p.a)?;
    Ok(l_from_frames(&frames, p))
}

/// Condition `iv) l(n+l) ≤ l(n) e^{εl}` on a table, with a relative tolerance.
pub fn satisfies_iv(table: &[f64], eps: f64) -> bool {
    (0..table.len()).all(|n| {
        (n..table.len()).all(|m| table[m] <= table[n] * (eps * (m - n) as f64).exp() * (1.0 + 1e-12))
    })
}

pub fn l_from_frames(frames: &OrbitFrames, p: &PesinParams) -> LEstimate {
    let big_n = frames.horizon();
    let angles: Vec<f64> = (0..=big_n).map(|n| frames.angle(n)).collect();
    let raw: Vec<f64> = crate::parallel::map_indexed(big_n + 1, |n| {
        let mut s = ScaledBasis::new(frames.e[n].clone());
        let mut u = ScaledBasis::new(frames.h[n].clone());
        let mut need: f64 = 0.0;
        for l in 0..=big_n - n {
            if l > 0 {
                s.push_projected(&frames.factors[n + l - 1], &frames.proj_e[n + l]);
                u.push(&frames.factors[n + l - 1]);
            }
            let lf = l as f64;
            let i = if s.m.ncols() > 0 {
                s.log_norm() - (p.a + p.eps) * lf
            } else {
                f64::NEG_INFINITY
            };
            let ii = if u.m.ncols() > 0 {
                (p.b - p.eps) * lf - u.log_conorm()
            } else {
                f64::NEG_INFINITY
            };
            let iii = -p.eps * lf - angles[n + l].ln();
            need = need.max(i).max(ii).max(iii);
        }
        need.exp().max(1.0)
    });
    let mut table = raw.clone();
    for n in (0..big_n).rev() {
        table[n] = table[n].max(table[n + 1] * (-p.eps).exp());
    }
    LEstimate {
        l: raw[0],
        raw_satisfies_iv: satisfies_iv(&raw, p.eps),
        table_satisfies_iv: satisfies_iv(&table, p.eps),
        raw,
        table,
        short_horizon: big_n < SHORT_HORIZON,
        horizon: big_n,
        stable_dim: frames.stable_dim(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rds::LinearFamily;
    use nalgebra::dvector;

    fn params() -> PesinParams {
        PesinParams {
            a: -1.0,
            b: -0.5,
            k: 1,
            eps: 0.00125,
            l_cap: 1.0,
            r_cap: 1.0,
            c_cap: 1.0,
        }
    }

    fn cocycle(q: &Matrix) -> LinearFamily {
        let delta = 0.2;
        let p = params();
        let d = Matrix::from_diagonal(&dvector![(p.a - delta).exp(), (p.b + delta).exp()]);
        LinearFamily::constant(q * d * q.transpose()).unwrap()
    }

    #[test]
    fn diagonal_cocycle_gives_one() {
        let fam = cocycle(&Matrix::identity(2, 2));
        let omega = OmegaPrefix::constant(vec![0.0], 60);
        let est = estimate_l(&fam, &omega, &dvector![0.0, 0.0], &params(), 60).unwrap();
        assert_eq!(est.l, 1.0);
        assert!(est.table.iter().all(|v| *v == 1.0));
        assert!(est.table_satisfies_iv && !est.short_horizon);
        assert_eq!(est.stable_dim, 1);
    }

    #[test]
    fn rotation_does_not_change_l() {
        let t: f64 = 0.7;
        let q = Matrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        let fam = cocycle(&q);
        let omega = OmegaPrefix::constant(vec![0.0], 60);
        let est = estimate_l(&fam, &omega, &dvector![0.0, 0.0], &params(), 60).unwrap();
        assert!((est.l - 1.0).abs() < 1e-9, "{}", est.l);
    }

    #[test]
    fn short_horizon_is_flagged() {
        let fam = cocycle(&Matrix::identity(2, 2));
        let omega = OmegaPrefix::constant(vec![0.0], 1);
        let est = estimate_l(&fam, &omega, &dvector![0.0, 0.0], &params(), 1).unwrap();
        assert_eq!(est.l, 1.0);
        assert!(est.short_horizon);
    }

    #[test]
    fn skewed_splitting_raises_l() {
        // H_0 = E_0^⊥ is pushed toward the true unstable axis, which is not orthogonal to E.
        let a = Matrix::from_row_slice(2, 2, &[0.3, 1.0, 0.0, 0.9]);
        let fam = LinearFamily::constant(a).unwrap();
        let omega = OmegaPrefix::constant(vec![0.0], 40);
        let p = PesinParams {
            a: -0.5,
            b: -0.2,
            eps: 0.0005,
            ..params()
        };
        let est = estimate_l(&fam, &omega, &dvector![0.0, 0.0], &p, 40).unwrap();
        assert!(est.l > 1.0);
        assert!(est.table_satisfies_iv);
        assert!(est.table.iter().zip(&est.raw).all(|(t, r)| t >= r));
    }
}
