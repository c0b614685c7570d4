//! Brownian-driven stochastic flows `dX = b(X) dt + σ(X) dW` on R^d.
//!
//! The local characteristics are `b` and `a(x, y) = σ(x) σ(y)ᵀ`. Models expose
//! analytic first and second spatial derivatives, which drive the variational
//! equations in [`integrate`] and the seminorm estimates in [`norms`].

mod family;
mod integrate;
mod models;
mod norms;

pub use family::{discretize, SdeFamily};
pub use integrate::{integrate_flow, FlowStep, IntegratorOrder, NoiseSegment};
pub use models::{builtin_model, PolySdeModel};
pub use norms::{characteristic_norms, BoxSpec, CharacteristicNorms};

use crate::error::{PesinError, Result};
use crate::linalg::{Matrix, Vector};

/// Layout conventions (all row-major, `d` = state dimension, `m` = noise dimension):
/// drift Jacobian `[i][j]`, drift Hessian `[i][j][k]`, diffusion `[i][r]`,
/// diffusion Jacobian `[i][r][j] = ∂_j σ_ir`, diffusion Hessian `[i][r][j][k]`.
pub trait SdeFlowModel: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;

    fn name(&self) -> String {
        "custom".into()
    }

    fn drift(&self, x: &[f64], out: &mut [f64]);
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]);
    fn drift_hessian(&self, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]);
    fn diffusion_hessian(&self, x: &[f64], out: &mut [f64]);

    /// `σ_ii` depends on `x_i` only and `σ_ij = 0` for `i ≠ j`.
    fn diagonal_noise(&self) -> bool {
        false
    }

    /// Third derivatives `∂³_i σ_ii`, needed for the second variation of the
    /// order-2 scheme.
    fn diffusion_diag_third(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(PesinError::Capability(
            "third derivative of the diffusion".into(),
        ))
    }

    /// `σ` does not depend on `x`.
    fn additive_noise(&self) -> bool {
        false
    }
}

/// Covariance field `a(x, y) = σ(x) σ(y)ᵀ`.
pub fn covariance<M: SdeFlowModel + ?Sized>(model: &M, x: &Vector, y: &Vector) -> Matrix {
    let (d, m) = (model.dim(), model.noise_dim());
    let mut sx = vec![0.0; d * m];
    let mut sy = vec![0.0; d * m];
    model.diffusion(x.as_slice(), &mut sx);
    model.diffusion(y.as_slice(), &mut sy);
    let sx = Matrix::from_row_slice(d, m, &sx);
    let sy = Matrix::from_row_slice(d, m, &sy);
    sx * sy.transpose()
}

/// Correction term `c_i(x) = Σ_j ∂a_ij/∂x_j (x, y)|_{y=x} = Σ_j Σ_r ∂_j σ_ir(x) σ_jr(x)`.
pub fn correction_term<M: SdeFlowModel + ?Sized>(model: &M, x: &Vector) -> Vector {
    let (d, m) = (model.dim(), model.noise_dim());
    let mut s = vec![0.0; d * m];
    let mut ds = vec![0.0; d * m * d];
    model.diffusion(x.as_slice(), &mut s);
    model.diffusion_jacobian(x.as_slice(), &mut ds);
    let mut c = Vector::zeros(d);
    correction_into(d, m, &s, &ds, c.as_mut_slice());
    c
}

pub(crate) fn correction_into(d: usize, m: usize, s: &[f64], ds: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(d) {
        let mut acc = 0.0;
        for j in 0..d {
            for r in 0..m {
                acc += ds[(i * m + r) * d + j] * s[j * m + r];
            }
        }
        *o = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    /// `σ(x) = sqrt(1 + x²)` in d = 1, so `a(x, y) = sqrt(1+x²) sqrt(1+y²)`.
    #[derive(Debug)]
    struct SqrtNoise;

    impl SdeFlowModel for SqrtNoise {
        fn dim(&self) -> usize {
            1
        }
        fn noise_dim(&self) -> usize {
            1
        }
        fn drift(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn drift_hessian(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn diffusion(&self, x: &[f64], out: &mut [f64]) {
            out[0] = (1.0 + x[0] * x[0]).sqrt();
        }
        fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] / (1.0 + x[0] * x[0]).sqrt();
        }
        fn diffusion_hessian(&self, x: &[f64], out: &mut [f64]) {
            out[0] = (1.0 + x[0] * x[0]).powf(-1.5);
        }
    }

    #[test]
    fn correction_term_examples() {
        let ou = builtin_model("ou", &Default::default()).unwrap();
        assert_eq!(correction_term(ou.as_ref(), &dvector![0.7]), dvector![0.0]);

        let lin = PolySdeModel::from_tables(
            vec![crate::poly::Polynomial::zero(1)],
            vec![vec![crate::poly::Polynomial::linear(1, 0, 1.0)]],
        )
        .unwrap();
        for x in [-1.3, 0.0, 0.4, 2.0] {
            assert!((correction_term(&lin, &dvector![x])[0] - x).abs() < 1e-15);
            assert!((correction_term(&SqrtNoise, &dvector![x])[0] - x).abs() < 1e-14);
        }
    }

    #[test]
    fn correction_term_matches_finite_difference_of_covariance() {
        let m = builtin_model("duffing_vdp", &Default::default()).unwrap();
        let x = dvector![0.8, -0.3];
        let c = correction_term(m.as_ref(), &x);
        let h = 1e-6;
        for i in 0..2 {
            let mut fd = 0.0;
            for j in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                fd += (covariance(m.as_ref(), &xp, &x)[(i, j)] - covariance(m.as_ref(), &xm, &x)[(i, j)])
                    / (2.0 * h);
            }
            assert!((c[i] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn covariance_is_psd_on_diagonal() {
        let m = builtin_model("duffing_vdp", &Default::default()).unwrap();
        for x in [dvector![0.5, 1.0], dvector![-2.0, 0.3]] {
            let a = covariance(m.as_ref(), &x, &x);
            assert!((&a - a.transpose()).norm() < 1e-15);
            assert!(a.symmetric_eigenvalues().iter().all(|e| *e >= -1e-12));
        }
    }
}
