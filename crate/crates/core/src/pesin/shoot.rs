//! Points on a local stable leaf as roots of the unstable part of `f^L` (shooting).

use crate::error::{PesinError, Result};
use crate::linalg::{co_norm, complement, Matrix, Vector};
use crate::rds::{orbit_with_jacobians, DiffeoFamily, OmegaPrefix};

use super::frames::OrbitFrames;

const MAX_NEWTON: usize = 40;
const MAX_HALVINGS: usize = 40;
/// Accepted linearized distance to the leaf, relative to `1 + |s|`.
pub const SHOOT_TOL: f64 = 1e-9;

/// Solves `Q_Lᵀ (f^L_ω z(s) − t_L) = 0` for disc coordinates `s`, where `Q_l`
/// spans `E_l^⊥` along the reference frames and `t` is the orbit that defines
/// the leaf. The horizon is approached by continuation `1, 2, 4, …, L`.
pub(crate) struct Shooter<'a, F: DiffeoFamily + ?Sized> {
    family: &'a F,
    omega: &'a OmegaPrefix,
    q: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub(crate) struct Shot {
    pub s: Vector,
    /// Linearized distance `|R| / co_norm(∂R/∂s)` at the final horizon.
    pub error: f64,
}

impl<'a, F: DiffeoFamily + ?Sized> Shooter<'a, F> {
    pub fn new(family: &'a F, omega: &'a OmegaPrefix, frames: &OrbitFrames, horizon: usize) -> Self {
        let d = frames.dim();
        let q = (0..=horizon.min(frames.horizon()))
            .map(|l| complement(&frames.e[l], d))
            .collect();
        Self { family, omega, q }
    }

    pub fn horizon(&self) -> usize {
        self.q.len() - 1
    }

    fn residual(
        &self,
        z: &Vector,
        dz: &Matrix,
        target: &Vector,
        l: usize,
    ) -> Result<(Vector, Matrix)> {
        let orbit = orbit_with_jacobians(self.family, self.omega, z, l)?;
        let d = z.len();
        let prod = orbit
            .jacobians
            .iter()
            .fold(Matrix::identity(d, d), |acc, j| j * acc);
        let qt = self.q[l].transpose();
        Ok((&qt * (&orbit.points[l] - target), qt * prod * dz))
    }

    /// `param(s)` returns the point `z(s)` and `dz/ds`; `targets[l]` is the leaf orbit.
    pub fn solve<P>(&self, param: P, targets: &[Vector], s0: Vector) -> Result<Shot>
    where
        P: Fn(&Vector) -> Result<(Vector, Matrix)>,
    {
        let big_l = self.horizon();
        if targets.len() <= big_l {
            return Err(PesinError::InvalidInput("leaf orbit shorter than the horizon".into()));
        }
        if s0.is_empty() {
            return Ok(Shot { s: s0, error: 0.0 });
        }
        let mut stages = Vec::new();
        let mut l = 1;
        while l < big_l {
            stages.push(l);
            l *= 2;
        }
        stages.push(big_l.max(1));

        let mut s = s0;
        let mut last = (Vector::zeros(0), Matrix::zeros(0, 0));
        for &l in &stages {
            let eval = |s: &Vector| -> Result<(Vector, Matrix)> {
                let (z, dz) = param(s)?;
                self.residual(&z, &dz, &targets[l], l)
            };
            let (mut r, mut jac) = eval(&s)?;
            for _ in 0..MAX_NEWTON {
                let step = match jac.clone().lu().solve(&(-&r)) {
                    Some(step) if step.iter().all(|v| v.is_finite()) => step,
                    _ => return Err(PesinError::Degeneracy("singular shooting derivative".into())),
                };
                let mut t = 1.0;
                let mut moved = false;
                for _ in 0..MAX_HALVINGS {
                    let cand = &s + &step * t;
                    if let Ok((rc, jc)) = eval(&cand) {
                        if rc.norm() < r.norm() {
                            s = cand;
                            r = rc;
                            jac = jc;
                            moved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !moved || (step.norm() * t) <= 1e-15 * (1.0 + s.norm()) {
                    break;
                }
            }
            last = (r, jac);
        }
        let (r, jac) = last;
        let cn = co_norm(&jac);
        let error = if cn > 0.0 { r.norm() / cn } else { f64::INFINITY };
        if !(error <= SHOOT_TOL * (1.0 + s.norm())) {
            return Err(PesinError::Degeneracy(format!(
                "shooting did not converge (distance estimate {error:.3e})"
            )));
        }
        Ok(Shot { s, error })
    }
}
