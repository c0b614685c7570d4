//! Grid estimates of the weighted Hölder seminorms `‖a‖~_{m+δ}` and `‖b‖_{m+δ}`.
//!
//! Suprema over R^d are replaced by maxima over a grid on a box, so every value
//! is a lower bound of the true seminorm.

use serde::{Deserialize, Serialize};

use super::SdeFlowModel;
use crate::error::{PesinError, Result};
use crate::linalg::{op_norm, Matrix, Vector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharacteristicNorms {
    pub a_norm: f64,
    pub b_norm: f64,
    pub order: usize,
    pub delta: f64,
    pub box_radius: f64,
    pub grid_points_per_axis: usize,
    /// Always true: grid maxima bound the suprema from below.
    pub lower_bound: bool,
}

/// Pairs kept when searching the mixed Hölder quotient of `a`.
const TOP_PAIRS: usize = 64;

/// Multi-indices of total order `k` (k ≤ 2) as lists of differentiated variables.
fn multi_indices(d: usize, k: usize) -> Vec<Vec<usize>> {
    match k {
        0 => vec![vec![]],
        1 => (0..d).map(|j| vec![j]).collect(),
        2 => (0..d)
            .flat_map(|j| (j..d).map(move |l| vec![j, l]))
            .collect(),
        _ => unreachable!("orders above 2 are rejected earlier"),
    }
}

struct Derivs {
    b: Vec<f64>,
    jb: Vec<f64>,
    hb: Vec<f64>,
    s: Vec<f64>,
    js: Vec<f64>,
    hs: Vec<f64>,
}

fn derivs_at<M: SdeFlowModel + ?Sized>(model: &M, x: &[f64]) -> Derivs {
    let (d, m) = (model.dim(), model.noise_dim());
    let mut r = Derivs {
        b: vec![0.0; d],
        jb: vec![0.0; d * d],
        hb: vec![0.0; d * d * d],
        s: vec![0.0; d * m],
        js: vec![0.0; d * m * d],
        hs: vec![0.0; d * m * d * d],
    };
    model.drift(x, &mut r.b);
    model.drift_jacobian(x, &mut r.jb);
    model.drift_hessian(x, &mut r.hb);
    model.diffusion(x, &mut r.s);
    model.diffusion_jacobian(x, &mut r.js);
    model.diffusion_hessian(x, &mut r.hs);
    r
}

/// `D^α b` as a vector.
fn drift_partial(dv: &Derivs, d: usize, alpha: &[usize]) -> Vector {
    Vector::from_iterator(
        d,
        (0..d).map(|i| match alpha {
            [] => dv.b[i],
            [j] => dv.jb[i * d + j],
            [j, l] => dv.hb[(i * d + j) * d + l],
            _ => unreachable!(),
        }),
    )
}

/// `D^α σ` as a `d × m` matrix.
fn diffusion_partial(dv: &Derivs, d: usize, m: usize, alpha: &[usize]) -> Matrix {
    Matrix::from_fn(d, m, |i, r| match alpha {
        [] => dv.s[i * m + r],
        [j] => dv.js[(i * m + r) * d + j],
        [j, l] => dv.hs[((i * m + r) * d + j) * d + l],
        _ => unreachable!(),
    })
}

pub fn characteristic_norms<M: SdeFlowModel + ?Sized>(
    model: &M,
    bx: &BoxSpec,
    order: usize,
    delta: f64,
    grid: usize,
) -> Result<CharacteristicNorms> {
    let (d, m) = (model.dim(), model.noise_dim());
    if order > 2 {
        return Err(PesinError::Capability(
            "models provide derivatives up to order 2".into(),
        ));
    }
    if grid < 8 {
        return Err(PesinError::InvalidInput("grid needs at least 8 points per axis".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(PesinError::InvalidInput("Hölder exponent must lie in (0, 1]".into()));
    }
    if bx.center.len() != d || !(bx.radius > 0.0) {
        return Err(PesinError::Dimension("box center or radius invalid".into()));
    }
    // odd count so the center is a grid point
    let per_axis = grid | 1;
    let axis: Vec<f64> = (0..per_axis)
        .map(|k| -bx.radius + 2.0 * bx.radius * k as f64 / (per_axis - 1) as f64)
        .collect();
    let total = per_axis.pow(d as u32);
    let points: Vec<Vector> = (0..total)
        .map(|mut c| {
            Vector::from_iterator(
                d,
                (0..d).map(|i| {
                    let v = bx.center[i] + axis[c % per_axis];
                    c /= per_axis;
                    v
                }),
            )
        })
        .collect();
    let derivs: Vec<Derivs> = points.iter().map(|p| derivs_at(model, p.as_slice())).collect();

    // drift
    let mut b_norm = points
        .iter()
        .zip(&derivs)
        .map(|(p, dv)| drift_partial(dv, d, &[]).norm() / (1.0 + p.norm()))
        .fold(0.0, f64::max);
    for k in 1..=order {
        for alpha in multi_indices(d, k) {
            b_norm += derivs
                .iter()
                .map(|dv| drift_partial(dv, d, &alpha).norm())
                .fold(0.0, f64::max);
        }
    }
    for alpha in multi_indices(d, order) {
        let vals: Vec<Vector> = derivs.iter().map(|dv| drift_partial(dv, d, &alpha)).collect();
        let mut best: f64 = 0.0;
        for p in 0..total {
            for q in p + 1..total {
                let dist = (&points[p] - &points[q]).norm().powf(delta);
                best = best.max((&vals[p] - &vals[q]).norm() / dist);
            }
        }
        b_norm += best;
    }

    // covariance a(x, y) = σ(x) σ(y)ᵀ
    let sig: Vec<Matrix> = derivs.iter().map(|dv| diffusion_partial(dv, d, m, &[])).collect();
    let mut a_norm: f64 = 0.0;
    for p in 0..total {
        for q in 0..total {
            let w = (1.0 + points[p].norm()) * (1.0 + points[q].norm());
            a_norm = a_norm.max(op_norm(&(&sig[p] * sig[q].transpose())) / w);
        }
    }
    for k in 1..=order {
        for alpha in multi_indices(d, k) {
            let g: Vec<Matrix> = derivs.iter().map(|dv| diffusion_partial(dv, d, m, &alpha)).collect();
            let mut best: f64 = 0.0;
            for p in 0..total {
                for q in 0..total {
                    best = best.max(op_norm(&(&g[p] * g[q].transpose())));
                }
            }
            a_norm += best;
        }
    }
    for alpha in multi_indices(d, order) {
        let g: Vec<Matrix> = derivs.iter().map(|dv| diffusion_partial(dv, d, m, &alpha)).collect();
        // difference quotients (g(x) - g(x')) / |x - x'|^δ, largest first
        let mut quotients: Vec<Matrix> = Vec::new();
        for p in 0..total {
            for q in p + 1..total {
                let dist = (&points[p] - &points[q]).norm().powf(delta);
                quotients.push((&g[p] - &g[q]) / dist);
            }
        }
        quotients.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        quotients.truncate(TOP_PAIRS);
        let mut best: f64 = 0.0;
        for u in &quotients {
            for v in &quotients {
                best = best.max(op_norm(&(u * v.transpose())));
            }
        }
        a_norm += best;
    }

    Ok(CharacteristicNorms {
        a_norm,
        b_norm,
        order,
        delta,
        box_radius: bx.radius,
        grid_points_per_axis: per_axis,
        lower_bound: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::PolySdeModel;
    use crate::poly::Polynomial;

    fn model(drift: Polynomial, sigma: Polynomial) -> PolySdeModel {
        PolySdeModel::from_tables(vec![drift], vec![vec![sigma]]).unwrap()
    }

    #[test]
    fn linear_drift_seminorm() {
        let m = model(Polynomial::linear(1, 0, -1.0), Polynomial::zero(1));
        let bx = |r| BoxSpec {
            center: vec![0.0],
            radius: r,
        };
        // on [-10, 10]: 10/11 + 1 + 0
        let n = characteristic_norms(&m, &bx(10.0), 1, 1.0, 64).unwrap();
        let boxed = 10.0 / 11.0 + 1.0;
        assert!((n.b_norm - boxed).abs() / boxed < 0.02, "{}", n.b_norm);
        // the R^d value 2 is approached as the box grows
        let n = characteristic_norms(&m, &bx(100.0), 1, 1.0, 64).unwrap();
        assert!((n.b_norm - 2.0).abs() / 2.0 < 0.02, "{}", n.b_norm);
        assert_eq!(n.a_norm, 0.0);
    }

    #[test]
    fn zero_drift_and_constant_covariance() {
        let c0: f64 = 0.36;
        let m = model(Polynomial::zero(1), Polynomial::constant(1, c0.sqrt()));
        let n = characteristic_norms(
            &m,
            &BoxSpec {
                center: vec![0.0],
                radius: 5.0,
            },
            1,
            1.0,
            16,
        )
        .unwrap();
        assert_eq!(n.b_norm, 0.0);
        assert!((n.a_norm - c0).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let m = model(Polynomial::zero(1), Polynomial::zero(1));
        let bx = BoxSpec {
            center: vec![0.0],
            radius: 1.0,
        };
        assert!(characteristic_norms(&m, &bx, 1, 1.0, 4).is_err());
        assert!(characteristic_norms(&m, &bx, 3, 1.0, 8).is_err());
    }
}
