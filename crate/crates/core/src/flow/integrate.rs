//! Pathwise integration of the flow and its first two variational equations.
//!
//! One substep of length `h` with Brownian increment `ΔW` is
//!
//! ```text
//! p  = x + b(x) h + σ(x) ΔW
//! x' = x + ½ (b(x) + b(p)) h + σ(x) ΔW  [+ ½ σ_ii ∂_i σ_ii (ΔW_i² - h)]
//! ```
//!
//! i.e. a Heun corrector on the drift and Itô Euler–Maruyama on the noise, with
//! the bracketed Milstein term for the order-2 scheme. Jacobian and Hessian are
//! the exact first and second derivatives of this discrete map.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::SdeFlowModel;
use crate::error::{PesinError, Result};
use crate::linalg::{Hessian, Matrix, Vector};
use crate::rds::{DerivOrder, DIVERGENCE_BOUND};
use crate::rng::{lane, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum IntegratorOrder {
    /// Heun drift with Euler–Maruyama noise.
    One,
    /// Adds the Milstein correction (diagonal noise only).
    Two,
}

/// Brownian increments over `[0, dt]` split into `substeps` equal pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSegment {
    pub dt: f64,
    pub substeps: usize,
    pub noise_dim: usize,
    /// `substeps × noise_dim`, row-major, each entry `N(0, dt/substeps)`.
    pub increments: Vec<f64>,
}

impl NoiseSegment {
    pub fn sample(rng: &mut dyn RngCore, dt: f64, substeps: usize, noise_dim: usize) -> Self {
        let sd = (dt / substeps as f64).sqrt();
        let increments = (0..substeps * noise_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut *rng);
                sd * z
            })
            .collect();
        Self {
            dt,
            substeps,
            noise_dim,
            increments,
        }
    }

    /// Segment number `index` of the stream `key`.
    pub fn from_key(key: StreamKey, index: u64, dt: f64, substeps: usize, noise_dim: usize) -> Self {
        Self::sample(&mut key.rng(lane::OMEGA, index), dt, substeps, noise_dim)
    }

    pub fn zero(dt: f64, substeps: usize, noise_dim: usize) -> Self {
        Self {
            dt,
            substeps,
            noise_dim,
            increments: vec![0.0; substeps * noise_dim],
        }
    }

    /// Concatenation in time (the second segment follows the first).
    pub fn concat(&self, next: &NoiseSegment) -> Result<Self> {
        if self.noise_dim != next.noise_dim
            || (self.dt / self.substeps as f64 - next.dt / next.substeps as f64).abs() > 1e-15
        {
            return Err(PesinError::InvalidInput(
                "segments must share noise dimension and substep length".into(),
            ));
        }
        let mut increments = self.increments.clone();
        increments.extend_from_slice(&next.increments);
        Ok(Self {
            dt: self.dt + next.dt,
            substeps: self.substeps + next.substeps,
            noise_dim: self.noise_dim,
            increments,
        })
    }

    /// Brownian displacement `W(dt) - W(0)`.
    pub fn total(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.noise_dim];
        for row in self.increments.chunks(self.noise_dim) {
            for (a, b) in w.iter_mut().zip(row) {
                *a += b;
            }
        }
        w
    }
}

#[derive(Debug, Clone)]
pub struct FlowStep {
    pub image: Vector,
    pub jacobian: Matrix,
    pub hessian: Hessian,
}

/// Image, Jacobian and Hessian of the time-`seg.dt` flow map driven by `seg`.
pub fn integrate_flow<M: SdeFlowModel + ?Sized>(
    model: &M,
    x: &Vector,
    seg: &NoiseSegment,
    order: IntegratorOrder,
) -> Result<FlowStep> {
    let ev = integrate(model, x, &seg.increments, seg.dt, seg.substeps, order, DerivOrder::Second)?;
    Ok(FlowStep {
        image: ev.0,
        jacobian: ev.1.expect("jacobian requested"),
        hessian: ev.2.expect("hessian requested"),
    })
}

/// Scratch buffers for one substep; sized once per integration.
struct Work {
    d: usize,
    m: usize,
    b0: Vec<f64>,
    b1: Vec<f64>,
    s: Vec<f64>,
    noise: Vec<f64>,
    p: Vec<f64>,
    next: Vec<f64>,
    jb0: Vec<f64>,
    jb1: Vec<f64>,
    js: Vec<f64>,
    ds: Vec<f64>,
    dp: Vec<f64>,
    dphi: Vec<f64>,
    hb0: Vec<f64>,
    hb1: Vec<f64>,
    hs: Vec<f64>,
    d2s: Vec<f64>,
    d2p: Vec<f64>,
    d2phi: Vec<f64>,
    third: Vec<f64>,
    jac: Vec<f64>,
    hess: Vec<f64>,
    jac_next: Vec<f64>,
    hess_next: Vec<f64>,
}

impl Work {
    fn new(d: usize, m: usize) -> Self {
        let z = |n: usize| vec![0.0; n];
        let mut jac = z(d * d);
        for i in 0..d {
            jac[i * d + i] = 1.0;
        }
        Self {
            d,
            m,
            b0: z(d),
            b1: z(d),
            s: z(d * m),
            noise: z(d),
            p: z(d),
            next: z(d),
            jb0: z(d * d),
            jb1: z(d * d),
            js: z(d * m * d),
            ds: z(d * d),
            dp: z(d * d),
            dphi: z(d * d),
            hb0: z(d * d * d),
            hb1: z(d * d * d),
            hs: z(d * m * d * d),
            d2s: z(d * d * d),
            d2p: z(d * d * d),
            d2phi: z(d * d * d),
            third: z(d),
            jac,
            hess: z(d * d * d),
            jac_next: z(d * d),
            hess_next: z(d * d * d),
        }
    }
}

/// Core integrator on a raw increment slice. Returns the image and, as requested,
/// the Jacobian and Hessian of the composite map.
pub(crate) fn integrate<M: SdeFlowModel + ?Sized>(
    model: &M,
    x0: &Vector,
    increments: &[f64],
    dt: f64,
    substeps: usize,
    order: IntegratorOrder,
    deriv: DerivOrder,
) -> Result<(Vector, Option<Matrix>, Option<Hessian>)> {
    let (d, m) = (model.dim(), model.noise_dim());
    if x0.len() != d {
        return Err(PesinError::Dimension(format!(
            "point has dimension {}, model has {d}",
            x0.len()
        )));
    }
    if substeps == 0 || increments.len() != substeps * m {
        return Err(PesinError::InvalidInput(format!(
            "expected {} increments for {substeps} substeps",
            substeps * m
        )));
    }
    if order == IntegratorOrder::Two && !model.diagonal_noise() {
        return Err(PesinError::Unsupported(
            "the order-2 scheme needs diagonal noise".into(),
        ));
    }
    let h = dt / substeps as f64;
    let first = deriv >= DerivOrder::First;
    let second = deriv >= DerivOrder::Second;
    let mut w = Work::new(d, m);
    let mut x: Vec<f64> = x0.iter().copied().collect();

    for (step, dw) in increments.chunks(m).enumerate() {
        substep(model, &mut w, &x, dw, h, order, first, second)?;
        std::mem::swap(&mut x, &mut w.next);
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(PesinError::Divergence {
                step,
                detail: format!("flow left the bounded region within substep {step}"),
            });
        }
    }

    let image = Vector::from_vec(x);
    let jac = first.then(|| Matrix::from_row_slice(d, d, &w.jac));
    let hess = second.then(|| {
        let mut hs = Hessian::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    hs.set(i, j, k, w.hess[(i * d + j) * d + k]);
                }
            }
        }
        hs
    });
    Ok((image, jac, hess))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn substep<M: SdeFlowModel + ?Sized>(
    model: &M,
    w: &mut Work,
    x: &[f64],
    dw: &[f64],
    h: f64,
    order: IntegratorOrder,
    first: bool,
    second: bool,
) -> Result<()> {
    let (d, m) = (w.d, w.m);
    let milstein = order == IntegratorOrder::Two;
    let needs_ds = !model.additive_noise();

    model.drift(x, &mut w.b0);
    model.diffusion(x, &mut w.s);
    for i in 0..d {
        let mut acc = 0.0;
        for r in 0..m {
            acc += w.s[i * m + r] * dw[r];
        }
        w.noise[i] = acc;
        w.p[i] = x[i] + w.b0[i] * h + acc;
    }
    model.drift(&w.p, &mut w.b1);
    if needs_ds && (first || milstein) {
        model.diffusion_jacobian(x, &mut w.js);
    }
    for i in 0..d {
        w.next[i] = x[i] + 0.5 * (w.b0[i] + w.b1[i]) * h + w.noise[i];
    }
    if milstein {
        // diagonal noise: m == d and σ_ii depends on x_i only
        for i in 0..d {
            let q = dw[i] * dw[i] - h;
            let s = w.s[i * m + i];
            let s1 = if needs_ds { w.js[(i * m + i) * d + i] } else { 0.0 };
            w.next[i] += 0.5 * s * s1 * q;
        }
    }
    if !first {
        return Ok(());
    }

    model.drift_jacobian(x, &mut w.jb0);
    model.drift_jacobian(&w.p, &mut w.jb1);
    // DS_ij = Σ_r ∂_j σ_ir ΔW_r
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            if needs_ds {
                for r in 0..m {
                    acc += w.js[(i * m + r) * d + j] * dw[r];
                }
            }
            w.ds[i * d + j] = acc;
        }
    }
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            w.dp[i * d + j] = id + w.jb0[i * d + j] * h + w.ds[i * d + j];
        }
    }
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for a in 0..d {
                acc += w.jb1[i * d + a] * w.dp[a * d + j];
            }
            let id = if i == j { 1.0 } else { 0.0 };
            w.dphi[i * d + j] = id + 0.5 * (w.jb0[i * d + j] + acc) * h + w.ds[i * d + j];
        }
    }
    if milstein && needs_ds {
        model.diffusion_hessian(x, &mut w.hs);
        for i in 0..d {
            let q = dw[i] * dw[i] - h;
            let s = w.s[i * m + i];
            let s1 = w.js[(i * m + i) * d + i];
            let s2 = w.hs[((i * m + i) * d + i) * d + i];
            w.dphi[i * d + i] += 0.5 * (s1 * s1 + s * s2) * q;
        }
    }

    if second {
        model.drift_hessian(x, &mut w.hb0);
        model.drift_hessian(&w.p, &mut w.hb1);
        if needs_ds && !milstein {
            model.diffusion_hessian(x, &mut w.hs);
        }
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut acc = 0.0;
                    if needs_ds {
                        for r in 0..m {
                            acc += w.hs[((i * m + r) * d + j) * d + k] * dw[r];
                        }
                    }
                    let ix = (i * d + j) * d + k;
                    w.d2s[ix] = acc;
                    w.d2p[ix] = w.hb0[ix] * h + acc;
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut acc = 0.0;
                    for a in 0..d {
                        for c in 0..d {
                            acc += w.hb1[(i * d + a) * d + c] * w.dp[a * d + j] * w.dp[c * d + k];
                        }
                        acc += w.jb1[i * d + a] * w.d2p[(a * d + j) * d + k];
                    }
                    let ix = (i * d + j) * d + k;
                    w.d2phi[ix] = 0.5 * (w.hb0[ix] + acc) * h + w.d2s[ix];
                }
            }
        }
        if milstein && needs_ds {
            model.diffusion_diag_third(x, &mut w.third)?;
            for i in 0..d {
                let q = dw[i] * dw[i] - h;
                let s = w.s[i * m + i];
                let s1 = w.js[(i * m + i) * d + i];
                let s2 = w.hs[((i * m + i) * d + i) * d + i];
                w.d2phi[(i * d + i) * d + i] += 0.5 * (3.0 * s1 * s2 + s * w.third[i]) * q;
            }
        }
        // H' = DΦ·H + D²Φ[J, J]
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut acc = 0.0;
                    for a in 0..d {
                        acc += w.dphi[i * d + a] * w.hess[(a * d + j) * d + k];
                        for c in 0..d {
                            acc += w.d2phi[(i * d + a) * d + c] * w.jac[a * d + j] * w.jac[c * d + k];
                        }
                    }
                    w.hess_next[(i * d + j) * d + k] = acc;
                }
            }
        }
        std::mem::swap(&mut w.hess, &mut w.hess_next);
    }

    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for a in 0..d {
                acc += w.dphi[i * d + a] * w.jac[a * d + j];
            }
            w.jac_next[i * d + j] = acc;
        }
    }
    std::mem::swap(&mut w.jac, &mut w.jac_next);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{builtin_model, PolySdeModel};
    use crate::poly::Polynomial;
    use crate::stats::mean_se;
    use nalgebra::dvector;
    use std::collections::BTreeMap;

    fn ode_minus_x() -> PolySdeModel {
        PolySdeModel::from_tables(
            vec![Polynomial::linear(1, 0, -1.0)],
            vec![vec![Polynomial::zero(1)]],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_decay_within_tolerance() {
        let seg = NoiseSegment::zero(1.0, 1000, 1);
        let s = integrate_flow(&ode_minus_x(), &dvector![1.0], &seg, IntegratorOrder::One).unwrap();
        let e = (-1.0f64).exp();
        assert!((s.image[0] - e).abs() < 1e-4);
        assert!((s.jacobian[(0, 0)] - e).abs() < 1e-4);
        assert_eq!(s.hessian.get(0, 0, 0), 0.0);
    }

    #[test]
    fn pure_noise_is_a_translation() {
        let m = PolySdeModel::from_tables(
            vec![Polynomial::zero(2), Polynomial::zero(2)],
            vec![
                vec![Polynomial::constant(2, 1.0), Polynomial::zero(2)],
                vec![Polynomial::zero(2), Polynomial::constant(2, 1.0)],
            ],
        )
        .unwrap();
        let seg = NoiseSegment::from_key(StreamKey::new(3, 0), 0, 1.0, 64, 2);
        let x = dvector![0.5, -0.25];
        let s = integrate_flow(&m, &x, &seg, IntegratorOrder::One).unwrap();
        let w = seg.total();
        assert!((s.image[0] - x[0] - w[0]).abs() < 1e-12);
        assert!((s.image[1] - x[1] - w[1]).abs() < 1e-12);
        assert_eq!(s.jacobian, Matrix::identity(2, 2));
    }

    #[test]
    fn ou_one_step_variance() {
        let m = builtin_model("ou", &BTreeMap::new()).unwrap();
        let key = StreamKey::new(11, 0);
        let xs: Vec<f64> = (0..10_000)
            .map(|i| {
                let seg = NoiseSegment::from_key(key, i, 1.0, 32, 1);
                integrate(m.as_ref(), &dvector![0.0], &seg.increments, 1.0, 32, IntegratorOrder::One, DerivOrder::Value)
                    .unwrap()
                    .0[0]
            })
            .collect();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let est = mean_se(&sq);
        let target = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((est.mean - target).abs() < 3.0 * est.se + 2e-3, "{est:?}");
    }

    fn fd_check(model: &dyn SdeFlowModel, x: &Vector, seg: &NoiseSegment, order: IntegratorOrder) {
        let s = integrate_flow(model, x, seg, order).unwrap();
        let d = x.len();
        let eps = 1e-5;
        for j in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let sp = integrate_flow(model, &xp, seg, order).unwrap();
            let sm = integrate_flow(model, &xm, seg, order).unwrap();
            for i in 0..d {
                let fd = (sp.image[i] - sm.image[i]) / (2.0 * eps);
                let an = s.jacobian[(i, j)];
                assert!((fd - an).abs() <= 1e-4 * (1.0 + an.abs()), "J[{i},{j}] {an} vs {fd}");
                for k in 0..d {
                    let fd = (sp.jacobian[(i, k)] - sm.jacobian[(i, k)]) / (2.0 * eps);
                    let an = s.hessian.get(i, k, j);
                    assert!((fd - an).abs() <= 1e-4 * (1.0 + an.abs()), "H[{i},{k},{j}] {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn variational_equations_match_finite_differences() {
        let dv = builtin_model("duffing_vdp", &BTreeMap::new()).unwrap();
        let seg = NoiseSegment::from_key(StreamKey::new(5, 0), 0, 1.0, 128, 1);
        fd_check(dv.as_ref(), &dvector![0.7, -0.4], &seg, IntegratorOrder::One);

        let gm = PolySdeModel::from_tables(
            vec![Polynomial::new(1, vec![(1.0, vec![1]), (-1.0, vec![3])]).unwrap()],
            vec![vec![Polynomial::new(1, vec![(0.3, vec![0]), (0.2, vec![2])]).unwrap()]],
        )
        .unwrap();
        let seg = NoiseSegment::from_key(StreamKey::new(6, 0), 0, 1.0, 128, 1);
        fd_check(&gm, &dvector![0.4], &seg, IntegratorOrder::One);
        fd_check(&gm, &dvector![0.4], &seg, IntegratorOrder::Two);
    }

    #[test]
    fn milstein_rejects_non_diagonal_noise() {
        let dv = builtin_model("duffing_vdp", &BTreeMap::new()).unwrap();
        let seg = NoiseSegment::zero(1.0, 4, 1);
        assert!(matches!(
            integrate_flow(dv.as_ref(), &dvector![0.1, 0.1], &seg, IntegratorOrder::Two),
            Err(PesinError::Unsupported(_))
        ));
    }

    #[test]
    fn flow_property_under_concatenation() {
        let dv = builtin_model("duffing_vdp", &BTreeMap::new()).unwrap();
        let key = StreamKey::new(8, 0);
        let s1 = NoiseSegment::from_key(key, 0, 1.0, 256, 1);
        let s2 = NoiseSegment::from_key(key, 1, 1.0, 256, 1);
        let x = dvector![0.5, 0.5];
        let a = integrate_flow(dv.as_ref(), &x, &s1, IntegratorOrder::One).unwrap().image;
        let b = integrate_flow(dv.as_ref(), &a, &s2, IntegratorOrder::One).unwrap().image;
        let whole = integrate_flow(dv.as_ref(), &x, &s1.concat(&s2).unwrap(), IntegratorOrder::One)
            .unwrap()
            .image;
        assert!((b - whole).norm() <= 1e-3);
    }
}
