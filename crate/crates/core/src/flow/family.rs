//! One-step flow maps `φ_{0,t}` as a random-diffeomorphism family.

use std::sync::Arc;

use rand::RngCore;

use super::integrate::{integrate, IntegratorOrder, NoiseSegment};
use super::{correction_into, SdeFlowModel};
use crate::error::{PesinError, Result};
use crate::linalg::{Matrix, Vector};
use crate::rds::{newton_inverse, DerivOrder, DiffeoFamily, MapEval, Params};
use crate::rng::{lane, StreamKey};

/// Largest `‖f^{-1}(f(x)) - x‖` tolerated on the probes run by [`discretize`].
pub const INVERSE_PROBE_TOL: f64 = 1e-3;
const PROBES: usize = 8;

/// Parameters are the Brownian increments of one segment.
#[derive(Debug, Clone)]
pub struct SdeFamily {
    model: Arc<dyn SdeFlowModel>,
    horizon: f64,
    substeps: usize,
    order: IntegratorOrder,
}

impl SdeFamily {
    /// Family without the inverse-consistency probe.
    pub fn new(
        model: Arc<dyn SdeFlowModel>,
        horizon: f64,
        substeps: usize,
        order: IntegratorOrder,
    ) -> Result<Self> {
        if substeps == 0 || !(horizon > 0.0) {
            return Err(PesinError::InvalidInput(
                "need substeps >= 1 and a positive horizon".into(),
            ));
        }
        if order == IntegratorOrder::Two && !model.diagonal_noise() {
            return Err(PesinError::Unsupported(
                "the order-2 scheme needs diagonal noise".into(),
            ));
        }
        Ok(Self {
            model,
            horizon,
            substeps,
            order,
        })
    }

    pub fn model(&self) -> &Arc<dyn SdeFlowModel> {
        &self.model
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn segment(&self, theta: &[f64]) -> NoiseSegment {
        NoiseSegment {
            dt: self.horizon,
            substeps: self.substeps,
            noise_dim: self.model.noise_dim(),
            increments: theta.to_vec(),
        }
    }

    /// Time-reversed integration with drift `-b + c` and the increments taken
    /// backwards: the starting guess for the inverse map.
    pub fn backward_guess(&self, theta: &[f64], y: &Vector) -> Result<Vector> {
        let (d, m) = (self.model.dim(), self.model.noise_dim());
        self.check_theta(theta)?;
        let h = self.horizon / self.substeps as f64;
        let mut x: Vec<f64> = y.iter().copied().collect();
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * m];
        let mut ds = vec![0.0; d * m * d];
        let mut c = vec![0.0; d];
        for (step, dw) in theta.chunks(m).rev().enumerate() {
            self.model.drift(&x, &mut b);
            self.model.diffusion(&x, &mut s);
            if self.model.additive_noise() {
                c.iter_mut().for_each(|v| *v = 0.0);
            } else {
                self.model.diffusion_jacobian(&x, &mut ds);
                correction_into(d, m, &s, &ds, &mut c);
            }
            for i in 0..d {
                let mut noise = 0.0;
                for r in 0..m {
                    noise += s[i * m + r] * dw[r];
                }
                x[i] += (-b[i] + c[i]) * h - noise;
            }
            if x.iter().any(|v| !v.is_finite() || v.abs() > crate::rds::DIVERGENCE_BOUND) {
                return Err(PesinError::Divergence {
                    step,
                    detail: "backward flow left the bounded region".into(),
                });
            }
        }
        Ok(Vector::from_vec(x))
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.substeps * self.model.noise_dim() {
            return Err(PesinError::InvalidInput(format!(
                "segment has {} increments, family expects {}",
                theta.len(),
                self.substeps * self.model.noise_dim()
            )));
        }
        Ok(())
    }

    /// Max of `‖f^{-1}(f(x)) - x‖` over probe points.
    pub fn inverse_probe(&self, key: StreamKey) -> Result<f64> {
        let d = self.model.dim();
        let mut worst: f64 = 0.0;
        for i in 0..PROBES {
            let mut rng = key.rng(lane::PROBE, i as u64);
            let x = Vector::from_iterator(
                d,
                (0..d).map(|_| {
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    z
                }),
            );
            let theta = self.sample_params(&mut rng);
            let y = self.apply(&theta, &x)?;
            let back = self.inverse(&theta, &y)?;
            worst = worst.max((back - x).norm());
        }
        Ok(worst)
    }
}

impl DiffeoFamily for SdeFamily {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn name(&self) -> String {
        format!("flow:{}", self.model.name())
    }

    fn sample_params(&self, rng: &mut dyn RngCore) -> Params {
        NoiseSegment::sample(rng, self.horizon, self.substeps, self.model.noise_dim()).increments
    }

    fn eval(&self, theta: &[f64], x: &Vector, order: DerivOrder) -> Result<MapEval> {
        self.check_theta(theta)?;
        let (image, jacobian, hessian) = integrate(
            self.model.as_ref(),
            x,
            theta,
            self.horizon,
            self.substeps,
            self.order,
            order,
        )?;
        Ok(MapEval {
            image,
            jacobian,
            hessian,
        })
    }

    /// Backward integration refined by Newton's method on the forward map.
    /// Falls back to the unrefined backward solution if Newton fails.
    fn inverse(&self, theta: &[f64], y: &Vector) -> Result<Vector> {
        let guess = self.backward_guess(theta, y)?;
        match newton_inverse(self, theta, y, guess.clone()) {
            Ok(x) => Ok(x),
            Err(PesinError::Degeneracy(_)) => Ok(guess),
            Err(e) => Err(e),
        }
    }

    fn inverse_jacobian(&self, theta: &[f64], y: &Vector) -> Result<Matrix> {
        let x = self.inverse(theta, y)?;
        self.jacobian(theta, &x)?
            .try_inverse()
            .ok_or_else(|| PesinError::Degeneracy("singular flow derivative".into()))
    }
}

/// Discretizes the flow into time-`horizon` maps and runs the inverse-consistency probe.
pub fn discretize(
    model: Arc<dyn SdeFlowModel>,
    horizon: f64,
    substeps: usize,
    order: IntegratorOrder,
) -> Result<SdeFamily> {
    let fam = SdeFamily::new(model, horizon, substeps, order)?;
    let err = fam.inverse_probe(StreamKey::new(0x5EED, 0))?;
    if err > INVERSE_PROBE_TOL {
        return Err(PesinError::InverseConsistency { max_error: err });
    }
    Ok(fam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{builtin_model, PolySdeModel};
    use crate::poly::Polynomial;
    use nalgebra::dvector;
    use std::collections::BTreeMap;

    #[test]
    fn deterministic_contraction_family() {
        let m = PolySdeModel::from_tables(
            vec![Polynomial::linear(1, 0, -1.0)],
            vec![vec![Polynomial::zero(1)]],
        )
        .unwrap();
        let fam = discretize(Arc::new(m), 1.0, 1024, IntegratorOrder::One).unwrap();
        let key = StreamKey::new(1, 0);
        let theta = fam.sample_params(&mut key.rng(lane::OMEGA, 0));
        let y = fam.apply(&theta, &dvector![2.0]).unwrap();
        assert!((y[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn additive_noise_family_is_a_random_translation() {
        let m = builtin_model("ou", &BTreeMap::from([("rate".into(), 0.0)])).unwrap();
        let fam = discretize(m, 1.0, 16, IntegratorOrder::One).unwrap();
        let key = StreamKey::new(2, 0);
        let t0 = fam.sample_params(&mut key.rng(lane::OMEGA, 0));
        let t1 = fam.sample_params(&mut key.rng(lane::OMEGA, 1));
        assert_ne!(t0, t1);
        let x = dvector![0.3];
        let shift = fam.apply(&t0, &x).unwrap() - &x;
        let shift2 = fam.apply(&t0, &dvector![-4.0]).unwrap() - dvector![-4.0];
        assert!((shift - shift2).norm() < 1e-12);
        assert_eq!(fam.jacobian(&t0, &x).unwrap(), Matrix::identity(1, 1));
    }

    #[test]
    fn multiplicative_noise_inverse_is_consistent() {
        let m = builtin_model("duffing_vdp", &BTreeMap::new()).unwrap();
        let fam = discretize(m, 1.0, 128, IntegratorOrder::One).unwrap();
        assert!(fam.inverse_probe(StreamKey::new(9, 1)).unwrap() < 1e-8);
        let raw = {
            let key = StreamKey::new(9, 2);
            let theta = fam.sample_params(&mut key.rng(lane::OMEGA, 0));
            let x = dvector![0.5, -0.5];
            let y = fam.apply(&theta, &x).unwrap();
            (fam.backward_guess(&theta, &y).unwrap() - x).norm()
        };
        assert!(raw < 0.2, "backward guess error {raw}");
    }

    #[test]
    fn wrong_segment_length_rejected() {
        let m = builtin_model("ou", &BTreeMap::new()).unwrap();
        let fam = SdeFamily::new(m, 1.0, 8, IntegratorOrder::One).unwrap();
        assert!(fam.apply(&[0.0; 3], &dvector![1.0]).is_err());
    }
}
