//! The Lyapunov inner products `⟨·,·⟩′_n` and the checks of their defining bounds.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::frames::{OrbitFrames, ScaledBasis};
use super::params::{comparison_constant, series_truncation, PesinParams};
use crate::error::{PesinError, Result};
use crate::linalg::{Matrix, Vector};
use crate::rng::{lane, StreamKey};

/// Relative tail tolerance of the truncated stable series.
pub const SERIES_TOL: f64 = 1e-10;

/// Gram matrices of `⟨·,·⟩′_n` on `E_n` and `H_n`, in the coordinates of the
/// orthonormal bases `e` and `h`.
#[derive(Debug, Clone)]
pub struct LyapunovMetric {
    pub level: usize,
    pub e: Matrix,
    pub h: Matrix,
    /// Estimated growth rate of `S^l_n` on `E_n`.
    pub rate: f64,
    /// Decay ratio `ρ = e^{2(rate − a − 2ε)}` of the stable series.
    pub ratio: f64,
    /// Series length `L` required for the tolerance.
    pub truncation: usize,
    /// Terms actually summed (less than `L` when the orbit is too short).
    pub summed: usize,
    /// Upper bound of the omitted stable tail per unit `|ξ|²`.
    pub tail: f64,
    /// `e^{−2(a+2ε)l}` for the summed terms.
    pub weights_e: Vec<f64>,
    /// `e^{2(b−2ε)l}` for `l = 0..=n`.
    pub weights_h: Vec<f64>,
    gram_e: Matrix,
    gram_h: Matrix,
    split: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapNorm {
    /// `max(‖ξ‖′, ‖η‖′)`
    pub value: f64,
    pub stable: f64,
    pub unstable: f64,
    /// Upper bound on the truncation error of `value`.
    pub uncertainty: f64,
}

fn gram(b: &ScaledBasis, weight_log: f64) -> Matrix {
    (b.m.transpose() * &b.m) * (2.0 * b.log_scale + weight_log).exp()
}

impl LyapunovMetric {
    /// Metric at level `n` of the frames; needs `n < horizon` to estimate the stable rate.
    pub fn at(frames: &OrbitFrames, n: usize, p: &PesinParams) -> Result<Self> {
        let big_n = frames.horizon();
        if n >= big_n {
            return Err(PesinError::InvalidInput(format!(
                "metric at level {n} needs factors beyond the horizon {big_n}"
            )));
        }
        let e = frames.e[n].clone();
        let h = frames.h[n].clone();
        let (k, dh) = (e.ncols(), h.ncols());
        let avail = big_n - n;
        let limit = p.a + 2.0 * p.eps;

        // stable growth rate from the second half of the available products
        let (rate, ratio, truncation) = if k == 0 {
            (f64::NEG_INFINITY, 0.0, 1)
        } else {
            let mut s = ScaledBasis::new(e.clone());
            let half = avail / 2;
            let mut log_half = 0.0;
            for l in 1..=avail {
                s.push_projected(&frames.factors[n + l - 1], &frames.proj_e[n + l]);
                if l == half {
                    log_half = s.log_norm();
                }
            }
            let rate = (s.log_norm() - log_half) / (avail - half) as f64;
            if rate >= limit {
                return Err(PesinError::SeriesDivergence { rate, limit });
            }
            let ratio = (2.0 * (rate - limit)).exp();
            (rate, ratio, series_truncation(ratio, SERIES_TOL))
        };

        let summed = truncation.min(avail + 1);
        let mut gram_e = Matrix::zeros(k, k);
        let mut weights_e = Vec::with_capacity(summed);
        let mut tail_c: f64 = 0.0;
        if k > 0 {
            let mut s = ScaledBasis::new(e.clone());
            for l in 0..summed {
                if l > 0 {
                    s.push_projected(&frames.factors[n + l - 1], &frames.proj_e[n + l]);
                }
                let wlog = -2.0 * limit * l as f64;
                weights_e.push(wlog.exp());
                gram_e += gram(&s, wlog);
                let term = 2.0 * s.log_norm() + wlog;
                tail_c = tail_c.max(term - l as f64 * ratio.ln());
            }
        }
        let tail = if k > 0 {
            (tail_c + summed as f64 * ratio.ln()).exp() / (1.0 - ratio)
        } else {
            0.0
        };

        let mut gram_h = Matrix::zeros(dh, dh);
        let mut weights_h = Vec::with_capacity(n + 1);
        if dh > 0 {
            let mut u = ScaledBasis::new(h.clone());
            for l in 0..=n {
                if l > 0 {
                    let inv = frames.factors[n - l].clone().try_inverse().ok_or_else(|| {
                        PesinError::Degeneracy(format!("singular factor at step {}", n - l))
                    })?;
                    u.push(&inv);
                }
                let wlog = 2.0 * (p.b - 2.0 * p.eps) * l as f64;
                weights_h.push(wlog.exp());
                gram_h += gram(&u, wlog);
            }
        }

        let mut joined = Matrix::zeros(e.nrows(), k + dh);
        joined.columns_mut(0, k).copy_from(&e);
        joined.columns_mut(k, dh).copy_from(&h);
        let split = joined
            .try_inverse()
            .ok_or_else(|| PesinError::Degeneracy("E_n and H_n do not span".into()))?;

        Ok(Self {
            level: n,
            e,
            h,
            rate,
            ratio,
            truncation,
            summed,
            tail,
            weights_e,
            weights_h,
            gram_e,
            gram_h,
            split,
        })
    }

    /// Coordinates `(c, w)` with `v = E c + H w`.
    pub fn split(&self, v: &Vector) -> (Vector, Vector) {
        let k = self.e.ncols();
        let coords = &self.split * v;
        (
            coords.rows(0, k).into_owned(),
            coords.rows(k, coords.len() - k).into_owned(),
        )
    }

    /// `‖ξ‖′` for `ξ = E c`.
    pub fn stable_norm(&self, c: &Vector) -> f64 {
        c.dot(&(&self.gram_e * c)).max(0.0).sqrt()
    }

    /// `‖η‖′` for `η = H w`.
    pub fn unstable_norm(&self, w: &Vector) -> f64 {
        w.dot(&(&self.gram_h * w)).max(0.0).sqrt()
    }

    /// Upper triangular factor `R` with `‖E c‖′ = |R c|`.
    pub fn stable_factor(&self) -> Result<Matrix> {
        if self.gram_e.ncols() == 0 {
            return Ok(self.gram_e.clone());
        }
        let ch = self
            .gram_e
            .clone()
            .cholesky()
            .ok_or_else(|| PesinError::Degeneracy("stable Gram matrix not positive definite".into()))?;
        Ok(ch.l().transpose())
    }
}

/// `‖v‖′_n = max(‖ξ‖′_n, ‖η‖′_n)` for `v = ξ + η ∈ E_n ⊕ H_n`.
pub fn lyapunov_norm(metric: &LyapunovMetric, v: &Vector) -> Result<LyapNorm> {
    if v.len() != metric.e.nrows() {
        return Err(PesinError::Dimension(format!(
            "vector of length {} at a metric of dimension {}",
            v.len(),
            metric.e.nrows()
        )));
    }
    let (c, w) = metric.split(v);
    let stable = metric.stable_norm(&c);
    let unstable = metric.unstable_norm(&w);
    let value = stable.max(unstable);
    let upper = (stable * stable + metric.tail * c.norm_squared()).sqrt().max(unstable);
    Ok(LyapNorm {
        value,
        stable,
        unstable,
        uncertainty: upper - value,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricBoundsReport {
    pub level: usize,
    pub samples: usize,
    /// `A = 4 (l′)² (1 − e^{−2ε})^{−1/2}`
    pub a_const: f64,
    pub passed_i: bool,
    pub passed_ii: bool,
    pub passed_iii: bool,
    /// Smallest `(bound − value) / bound` over samples for i); negative means failure.
    pub worst_margin_i: f64,
    /// Smallest `(value − bound) / bound` for ii).
    pub worst_margin_ii: f64,
    /// Smallest relative margin of the two-sided bound iii).
    pub worst_margin_iii: f64,
}

impl MetricBoundsReport {
    pub fn passed(&self) -> bool {
        self.passed_i && self.passed_ii && self.passed_iii
    }
}

fn gaussian(rng: &mut impl rand::Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Samples vectors and checks
/// i) `‖S¹ξ‖′_{n+1} ≤ e^{a+2ε}‖ξ‖′_n`, ii) `‖U¹η‖′_{n+1} ≥ e^{b−2ε}‖η‖′_n`,
/// iii) `½|ζ| ≤ ‖ζ‖′_n ≤ A e^{2εn}|ζ|`.
pub fn check_metric_bounds(
    frames: &OrbitFrames,
    p: &PesinParams,
    n: usize,
    samples: usize,
    key: StreamKey,
) -> Result<MetricBoundsReport> {
    let here = LyapunovMetric::at(frames, n, p)?;
    let next = LyapunovMetric::at(frames, n + 1, p)?;
    let j = &frames.factors[n];
    let d = frames.dim();
    let (k, dh) = (here.e.ncols(), here.h.ncols());
    let a_const = comparison_constant(p.l_cap, p.eps);
    let upper_iii = a_const * (2.0 * p.eps * n as f64).exp();
    let tol = 1e-9;

    let (mut m1, mut m2, mut m3) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for s in 0..samples {
        let mut rng = key.rng(lane::PROBE, s as u64);
        if k > 0 {
            let xi = &here.e * gaussian(&mut rng, k);
            let before = lyapunov_norm(&here, &xi)?;
            let after = lyapunov_norm(&next, &(j * &xi))?;
            let bound = (p.a + 2.0 * p.eps).exp() * before.value;
            let slack = (p.a + 2.0 * p.eps).exp() * before.uncertainty;
            m1 = m1.min((bound + slack - after.value) / bound);
        }
        if dh > 0 {
            let eta = &here.h * gaussian(&mut rng, dh);
            let before = lyapunov_norm(&here, &eta)?;
            let after = lyapunov_norm(&next, &(j * &eta))?;
            let bound = (p.b - 2.0 * p.eps).exp() * before.value;
            m2 = m2.min((after.value + after.uncertainty - bound) / bound);
        }
        let zeta = gaussian(&mut rng, d);
        let nz = zeta.norm();
        let val = lyapunov_norm(&here, &zeta)?;
        let low = (val.value + val.uncertainty - 0.5 * nz) / (0.5 * nz);
        let high = (upper_iii * nz - val.value) / (upper_iii * nz);
        m3 = m3.min(low.min(high));
    }
    Ok(MetricBoundsReport {
        level: n,
        samples,
        a_const,
        passed_i: m1 >= -tol,
        passed_ii: m2 >= -tol,
        passed_iii: m3 >= -tol,
        worst_margin_i: m1,
        worst_margin_ii: m2,
        worst_margin_iii: m3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn constant_frames(diag: &[f64], k: usize, horizon: usize) -> OrbitFrames {
        let d = diag.len();
        let j = Matrix::from_diagonal(&Vector::from_column_slice(diag));
        let e0 = Matrix::identity(d, d).columns(0, k).into_owned();
        OrbitFrames::from_factors(vec![Vector::zeros(d); horizon + 1], vec![j; horizon], e0).unwrap()
    }

    fn params(a: f64, b: f64, eps: f64) -> PesinParams {
        PesinParams {
            a,
            b,
            k: 1,
            eps,
            l_cap: 1.0,
            r_cap: 1.0,
            c_cap: 1.0,
        }
    }

    #[test]
    fn scalar_series_closed_form() {
        let frames = constant_frames(&[(-1.0f64).exp()], 1, 200);
        let p = params(-0.9, 0.0, 0.01);
        let m = LyapunovMetric::at(&frames, 0, &p).unwrap();
        let series = 1.0 / (1.0 - (-0.24f64).exp());
        let n = lyapunov_norm(&m, &dvector![1.0]).unwrap();
        assert!((n.value * n.value - series).abs() < 1e-9, "{}", n.value * n.value);
        assert!((n.value - 2.164867).abs() < 1e-6);
        assert!(n.uncertainty < 1e-9);
        assert_eq!(m.truncation, 103);
        assert_eq!(lyapunov_norm(&m, &dvector![0.0]).unwrap().value, 0.0);
    }

    #[test]
    fn unstable_part_at_level_zero_is_euclidean() {
        let frames = constant_frames(&[(-1.0f64).exp(), 0.9], 1, 50);
        let m = LyapunovMetric::at(&frames, 0, &params(-0.9, -0.2, 0.001)).unwrap();
        let n = lyapunov_norm(&m, &dvector![0.0, -3.0]).unwrap();
        assert!((n.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_summable_series_is_an_error() {
        let frames = constant_frames(&[(-0.5f64).exp()], 1, 50);
        let err = LyapunovMetric::at(&frames, 0, &params(-0.9, 0.0, 0.01)).unwrap_err();
        assert!(matches!(err, PesinError::SeriesDivergence { .. }));
    }

    #[test]
    fn shift_identity_for_constant_cocycle() {
        let lam = -1.0;
        let p = params(-0.9, -0.1, 0.01);
        let frames = constant_frames(&[f64::exp(lam), (-0.05f64).exp()], 1, 300);
        let r = check_metric_bounds(&frames, &p, 2, 50, StreamKey::new(3, 0)).unwrap();
        assert!(r.passed(), "{r:?}");
        // i) holds with ratio e^{λ − (a+2ε)}
        let expected = 1.0 - (lam - (p.a + 2.0 * p.eps)).exp();
        assert!((r.worst_margin_i - expected).abs() < 1e-9, "{} vs {expected}", r.worst_margin_i);
    }
}
