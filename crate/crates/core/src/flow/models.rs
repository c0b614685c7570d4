//! Polynomial SDE models and the named built-ins.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::SdeFlowModel;
use crate::error::{PesinError, Result};
use crate::poly::{PolyField, Polynomial};

/// Drift and diffusion given by polynomial tables.
#[derive(Debug, Clone)]
pub struct PolySdeModel {
    name: String,
    d: usize,
    m: usize,
    drift: PolyField,
    diffusion: PolyField,
    diag_third: Option<Vec<Polynomial>>,
    additive: bool,
}

impl PolySdeModel {
    /// `drift[i]` is `b_i`, `diffusion[i][r]` is `σ_ir`.
    pub fn from_tables(drift: Vec<Polynomial>, diffusion: Vec<Vec<Polynomial>>) -> Result<Self> {
        let d = drift.len();
        if d == 0 || diffusion.len() != d {
            return Err(PesinError::Dimension(
                "diffusion needs one row per drift component".into(),
            ));
        }
        let m = diffusion[0].len();
        if m == 0 || diffusion.iter().any(|row| row.len() != m) {
            return Err(PesinError::Dimension("ragged diffusion table".into()));
        }
        if drift.iter().chain(diffusion.iter().flatten()).any(|p| p.dim != d) {
            return Err(PesinError::Dimension(
                "every polynomial must take the state dimension of variables".into(),
            ));
        }
        let additive = diffusion.iter().flatten().all(|p| p.degree() == 0);
        let diagonal = m == d
            && (0..d).all(|i| {
                (0..d).all(|r| {
                    let p = &diffusion[i][r];
                    if i == r {
                        p.only_depends_on(i)
                    } else {
                        p.is_zero()
                    }
                })
            });
        let diag_third = diagonal.then(|| {
            (0..d)
                .map(|i| diffusion[i][i].derivative(i).derivative(i).derivative(i))
                .collect()
        });
        Ok(Self {
            name: "polynomial".into(),
            d,
            m,
            drift: PolyField::new(drift)?,
            diffusion: PolyField::new(diffusion.into_iter().flatten().collect())?,
            diag_third,
            additive,
        })
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }
}

impl SdeFlowModel for PolySdeModel {
    fn dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn name(&self) -> String {
        self.name.clone()
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.drift.eval_into(x, out);
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        self.drift.jacobian_into(x, out);
    }
    fn drift_hessian(&self, x: &[f64], out: &mut [f64]) {
        self.drift.hessian_into(x, out);
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        self.diffusion.eval_into(x, out);
    }
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
        self.diffusion.jacobian_into(x, out);
    }
    fn diffusion_hessian(&self, x: &[f64], out: &mut [f64]) {
        self.diffusion.hessian_into(x, out);
    }
    fn diagonal_noise(&self) -> bool {
        self.diag_third.is_some()
    }
    fn diffusion_diag_third(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.diag_third {
            Some(t) => {
                for (o, p) in out.iter_mut().zip(t) {
                    *o = p.eval(x);
                }
                Ok(())
            }
            None => Err(PesinError::Unsupported(
                "third diffusion derivatives exist only for diagonal noise".into(),
            )),
        }
    }
    fn additive_noise(&self) -> bool {
        self.additive
    }
}

fn take(params: &BTreeMap<String, f64>, allowed: &[(&str, f64)]) -> Result<Vec<f64>> {
    for k in params.keys() {
        if !allowed.iter().any(|(a, _)| a == k) {
            return Err(PesinError::Config(format!("unknown model parameter `{k}`")));
        }
    }
    Ok(allowed
        .iter()
        .map(|(k, v)| params.get(*k).copied().unwrap_or(*v))
        .collect())
}

/// Built-in models:
///
/// * `ou`: `dX = -rate X dt + sigma dW` in `dim` independent coordinates.
/// * `gradient_double_well`: `dX = (X - X³) dt + sigma dW` in d = 1.
/// * `duffing_vdp`: `dx = y dt`, `dy = (alpha x + beta y - x³ - x² y) dt + sigma x dW`.
pub fn builtin_model(name: &str, params: &BTreeMap<String, f64>) -> Result<Arc<dyn SdeFlowModel>> {
    let model = match name {
        "ou" => {
            let v = take(params, &[("rate", 1.0), ("sigma", 1.0), ("dim", 1.0)])?;
            let d = v[2] as usize;
            if d == 0 || v[2] != d as f64 {
                return Err(PesinError::Config("ou `dim` must be a positive integer".into()));
            }
            let drift = (0..d).map(|i| Polynomial::linear(d, i, -v[0])).collect();
            let diffusion = (0..d)
                .map(|i| {
                    (0..d)
                        .map(|r| {
                            if i == r {
                                Polynomial::constant(d, v[1])
                            } else {
                                Polynomial::zero(d)
                            }
                        })
                        .collect()
                })
                .collect();
            PolySdeModel::from_tables(drift, diffusion)?
        }
        "gradient_double_well" => {
            let v = take(params, &[("sigma", 0.5)])?;
            PolySdeModel::from_tables(
                vec![Polynomial::new(1, vec![(1.0, vec![1]), (-1.0, vec![3])])?],
                vec![vec![Polynomial::constant(1, v[0])]],
            )?
        }
        "duffing_vdp" => {
            let v = take(params, &[("alpha", 1.0), ("beta", -1.0), ("sigma", 0.5)])?;
            PolySdeModel::from_tables(
                vec![
                    Polynomial::linear(2, 1, 1.0),
                    Polynomial::new(
                        2,
                        vec![
                            (v[0], vec![1, 0]),
                            (v[1], vec![0, 1]),
                            (-1.0, vec![3, 0]),
                            (-1.0, vec![2, 1]),
                        ],
                    )?,
                ],
                vec![vec![Polynomial::zero(2)], vec![Polynomial::linear(2, 0, v[2])]],
            )?
        }
        other => {
            return Err(PesinError::Config(format!("unknown built-in model `{other}`")));
        }
    };
    Ok(Arc::new(model.named(name)))
}
