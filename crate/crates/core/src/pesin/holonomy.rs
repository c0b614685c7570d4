//! Transversal discs and the holonomy map between them along local stable leaves.

use serde::{Deserialize, Serialize};

use super::frames::OrbitFrames;
use super::metric::LyapunovMetric;
use super::params::PesinParams;
use super::shoot::Shooter;
use crate::error::{PesinError, Result};
use crate::linalg::{op_norm, Matrix, Vector};
use crate::poly::Polynomial;
use crate::rds::{compose, DiffeoFamily, OmegaPrefix};
use crate::rng::{lane, StreamKey};
use crate::stats::variance;

/// Largest fraction of chains that may fail before the geometry is rejected.
pub const MAX_DROP_RATE: f64 = 0.2;

/// `W = {x + E ψ(η) + H η : |η| < q}` for a polynomial `ψ: H → E`.
#[derive(Debug, Clone)]
pub struct TransversalDisc {
    /// One polynomial per E-coordinate, in the `d − k` H-coordinates.
    pub psi: Vec<Polynomial>,
    pub q: f64,
}

impl TransversalDisc {
    /// `ψ(η) = offset + slope η`.
    pub fn affine(offset: &Vector, slope: &Matrix, q: f64) -> Result<Self> {
        let (k, dh) = slope.shape();
        if offset.len() != k {
            return Err(PesinError::Dimension("offset and slope disagree".into()));
        }
        let psi = (0..k)
            .map(|i| {
                let mut terms = vec![(offset[i], vec![0; dh])];
                for j in 0..dh {
                    let mut e = vec![0; dh];
                    e[j] = 1;
                    terms.push((slope[(i, j)], e));
                }
                Polynomial::new(dh, terms)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { psi, q })
    }

    pub fn flat(k: usize, dh: usize, q: f64) -> Self {
        Self {
            psi: (0..k).map(|_| Polynomial::zero(dh)).collect(),
            q,
        }
    }

    pub fn eval(&self, eta: &Vector) -> Vector {
        Vector::from_iterator(self.psi.len(), self.psi.iter().map(|p| p.eval(eta.as_slice())))
    }

    pub fn derivative(&self, eta: &Vector) -> Matrix {
        let dh = eta.len();
        Matrix::from_fn(self.psi.len(), dh, |i, j| self.psi[i].derivative(j).eval(eta.as_slice()))
    }

    /// Area element `sqrt(det(I + Dψᵀ Dψ))` of the Euclidean measure on the disc.
    pub fn area_element(&self, eta: &Vector) -> f64 {
        let dpsi = self.derivative(eta);
        let g = Matrix::identity(eta.len(), eta.len()) + dpsi.transpose() * dpsi;
        g.determinant().sqrt()
    }

    /// `sup ‖ψ(η)‖′ + sup ‖D_η ψ‖′` over a sample of the q-ball, in the level-0 metric.
    pub fn norm(&self, metric: &LyapunovMetric, samples: usize, key: StreamKey) -> Result<DiscNorm> {
        let r = metric.stable_factor()?;
        let dh = metric.h.ncols();
        let mut sup_psi: f64 = 0.0;
        let mut sup_d: f64 = 0.0;
        for eta in ball(dh, self.q, samples, key, 0) {
            sup_psi = sup_psi.max((&r * self.eval(&eta)).norm());
            sup_d = sup_d.max(op_norm(&(&r * self.derivative(&eta))));
        }
        Ok(DiscNorm {
            value: sup_psi + sup_d,
            sup_psi,
            sup_derivative: sup_d,
            inside_ball: sup_psi < self.q,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiscNorm {
    /// `‖W‖`
    pub value: f64,
    pub sup_psi: f64,
    pub sup_derivative: f64,
    /// The disc lies inside the Lyapunov q-ball.
    pub inside_ball: bool,
}

/// Uniform points of the open `n`-ball of radius `rad` (including the center).
fn ball(n: usize, rad: f64, count: usize, key: StreamKey, tag: u64) -> Vec<Vector> {
    let mut rng = key.rng(lane::CHART, tag);
    let mut out = vec![Vector::zeros(n)];
    while out.len() < count.max(1) {
        let v = Vector::from_iterator(n, (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)));
        if v.norm() < 1.0 {
            out.push(v * rad);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolonomyOptions {
    pub chains: usize,
    /// Radius of the disc domains and of the Lyapunov ball.
    pub q: f64,
    /// Cap `ε_Δ` on `‖W‖`.
    pub disc_norm_cap: f64,
    /// Shooting horizon defining the local leaves.
    pub horizon: usize,
    pub seed: u64,
}

impl Default for HolonomyOptions {
    fn default() -> Self {
        Self {
            chains: 400,
            q: 0.2,
            disc_norm_cap: 0.25,
            horizon: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolonomyResult {
    /// Disc coordinates `(η₁, η₂)` of each leaf's intersections with `W1` and `W2`.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Kernel-density estimates of the Jacobian of `P_{W1,W2}` at the paired points.
    pub jacobians: Vec<f64>,
    /// Fraction of estimates in `[1/2, 2]`.
    pub fraction_in_bound: f64,
    /// Fraction of estimates in `[0.9, 1.1]`.
    pub fraction_near_one: f64,
    pub attempted: usize,
    pub dropped: usize,
    pub disc_norms: (f64, f64),
    pub bandwidth: Vec<f64>,
}

/// Silverman bandwidth per axis for a `dim`-variate sample of size `n`.
fn silverman(points: &[Vector]) -> Vec<f64> {
    let n = points.len() as f64;
    let dim = points[0].len();
    let factor = (4.0 / ((dim as f64 + 2.0) * n)).powf(1.0 / (dim as f64 + 4.0));
    (0..dim)
        .map(|a| {
            let col: Vec<f64> = points.iter().map(|p| p[a]).collect();
            (variance(&col).sqrt() * factor).max(1e-12)
        })
        .collect()
}

fn kde(points: &[Vector], at: &Vector, bw: &[f64]) -> f64 {
    let norm: f64 = bw.iter().map(|h| h * (2.0 * std::f64::consts::PI).sqrt()).product();
    points
        .iter()
        .map(|p| {
            let q: f64 = (0..at.len()).map(|a| ((at[a] - p[a]) / bw[a]).powi(2)).sum();
            (-0.5 * q).exp()
        })
        .sum::<f64>()
        / (points.len() as f64 * norm)
}

/// Holonomy between two transversal discs through the local stable leaves of
/// points sampled in the Lyapunov `q/2`-ball around `x`.
///
/// Each leaf is the set of `z` with `Q_Lᵀ (f^L z − f^L y) = 0`; its intersection
/// with a disc is found by damped Newton in the disc coordinate `η`. The
/// Jacobian at a pair is `(p₁(η₁)/a₁(η₁)) / (p₂(η₂)/a₂(η₂))` with `p_i` the kernel
/// density of the intersection coordinates and `a_i` the disc area element.
pub fn holonomy<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    w1: &TransversalDisc,
    w2: &TransversalDisc,
    p: &PesinParams,
    opts: &HolonomyOptions,
) -> Result<HolonomyResult> {
    let horizon = opts.horizon;
    if omega.len() < horizon + 1 {
        return Err(PesinError::InvalidInput(format!("holonomy needs {} noise records", horizon + 1)));
    }
    if opts.chains < 8 {
        return Err(PesinError::InvalidInput("holonomy needs at least 8 chains".into()));
    }
    let omega = omega.materialize(family);
    let frames = OrbitFrames::along_orbit(family, &omega, x, horizon + 1, p.a)?;
    let metric = LyapunovMetric::at(&frames, 0, p)?;
    let (e, h) = (metric.e.clone(), metric.h.clone());
    let (k, dh) = (e.ncols(), h.ncols());
    if dh == 0 {
        return Err(PesinError::Geometry("no unstable directions for transversal discs".into()));
    }
    for w in [w1, w2] {
        if w.psi.len() != k || w.psi.iter().any(|q| q.dim != dh) {
            return Err(PesinError::Dimension(format!(
                "disc maps need {k} components in {dh} variables"
            )));
        }
    }
    let key = StreamKey::new(opts.seed, 0);
    let n1 = w1.norm(&metric, 256, key)?;
    let n2 = w2.norm(&metric, 256, key)?;
    for (i, n) in [n1, n2].iter().enumerate() {
        if n.value > opts.disc_norm_cap || !n.inside_ball {
            return Err(PesinError::InvalidInput(format!(
                "disc {} has ‖W‖ = {:.4} (cap {}) or leaves the q-ball",
                i + 1,
                n.value,
                opts.disc_norm_cap
            )));
        }
    }
    let rinv = metric
        .stable_factor()?
        .try_inverse()
        .ok_or_else(|| PesinError::Degeneracy("stable Gram factor".into()))?;
    let shooter = Shooter::new(family, &omega, &frames, horizon);

    let chains: Vec<Option<(Vector, Vector)>> = crate::parallel::map_indexed(opts.chains, |j| {
        let mut rng = key.rng(lane::CHART, 1000 + j as u64);
        let c = loop {
            let v = Vector::from_iterator(k, (0..k).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)));
            if v.norm() < 1.0 {
                break v;
            }
        };
        let w = loop {
            let v = Vector::from_iterator(dh, (0..dh).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)));
            if v.norm() < 1.0 {
                break v;
            }
        };
        let half = 0.5 * opts.q;
        let y = x + &e * (&rinv * c * half) + &h * (&w * half);
        let leaf = compose(family, &omega, &y, horizon).ok()?;
        let meet = |disc: &TransversalDisc| -> Option<Vector> {
            let param = |eta: &Vector| -> Result<(Vector, Matrix)> {
                Ok((x + &e * disc.eval(eta) + &h * eta, &e * disc.derivative(eta) + &h))
            };
            let shot = shooter.solve(param, &leaf, &w * half).ok()?;
            (shot.s.norm() < disc.q).then_some(shot.s)
        };
        Some((meet(w1)?, meet(w2)?))
    });
    let attempted = chains.len();
    let pairs: Vec<(Vector, Vector)> = chains.into_iter().flatten().collect();
    let dropped = attempted - pairs.len();
    if dropped as f64 > MAX_DROP_RATE * attempted as f64 || pairs.len() < 2 {
        return Err(PesinError::Geometry(format!(
            "{dropped} of {attempted} chains failed to meet both discs"
        )));
    }

    let s1: Vec<Vector> = pairs.iter().map(|p| p.0.clone()).collect();
    let s2: Vec<Vector> = pairs.iter().map(|p| p.1.clone()).collect();
    let bw1 = silverman(&s1);
    let bw2 = silverman(&s2);
    let jacobians: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| {
            let d1 = kde(&s1, a, &bw1) / w1.area_element(a);
            let d2 = kde(&s2, b, &bw2) / w2.area_element(b);
            d1 / d2
        })
        .collect();
    let frac = |lo: f64, hi: f64| {
        jacobians.iter().filter(|j| **j >= lo && **j <= hi).count() as f64 / jacobians.len() as f64
    };
    Ok(HolonomyResult {
        fraction_in_bound: frac(0.5, 2.0),
        fraction_near_one: frac(0.9, 1.1),
        pairs: pairs
            .iter()
            .map(|(a, b)| (a.iter().copied().collect(), b.iter().copied().collect()))
            .collect(),
        jacobians,
        attempted,
        dropped,
        disc_norms: (n1.value, n2.value),
        bandwidth: bw1,
    })
}
