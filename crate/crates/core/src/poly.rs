//! Multivariate polynomials with exact derivatives of any order.

use serde::{Deserialize, Serialize};

use crate::error::{PesinError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Sum of monomials `coeff * prod_i x_i^{powers_i}` in `dim` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<Term>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: vec![] }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, vec![(c, vec![0; dim])]).expect("valid constant")
    }

    /// `c * x_i`
    pub fn linear(dim: usize, i: usize, c: f64) -> Self {
        let mut p = vec![0; dim];
        p[i] = 1;
        Self::new(dim, vec![(c, p)]).expect("valid linear term")
    }

    pub fn new(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<Self> {
        let p = Self {
            dim,
            terms: terms
                .into_iter()
                .map(|(coeff, powers)| Term { coeff, powers })
                .collect(),
        };
        p.validate()?;
        Ok(p.simplified())
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            if t.powers.len() != self.dim {
                return Err(PesinError::Dimension(format!(
                    "monomial has {} exponents, polynomial has {} variables",
                    t.powers.len(),
                    self.dim
                )));
            }
            if !t.coeff.is_finite() {
                return Err(PesinError::InvalidInput("non-finite coefficient".into()));
            }
        }
        Ok(())
    }

    fn simplified(mut self) -> Self {
        self.terms.sort_by(|a, b| a.powers.cmp(&b.powers));
        let mut out: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            match out.last_mut() {
                Some(last) if last.powers == t.powers => last.coeff += t.coeff,
                _ => out.push(t),
            }
        }
        out.retain(|t| t.coeff != 0.0);
        Self {
            dim: self.dim,
            terms: out,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.powers.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Depends on no variable other than `i`.
    pub fn only_depends_on(&self, i: usize) -> bool {
        self.terms
            .iter()
            .all(|t| t.powers.iter().enumerate().all(|(j, &p)| j == i || p == 0))
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for t in &self.terms {
            let mut m = t.coeff;
            for (xi, &p) in x.iter().zip(&t.powers) {
                match p {
                    0 => {}
                    1 => m *= xi,
                    2 => m *= xi * xi,
                    _ => m *= xi.powi(p as i32),
                }
            }
            acc += m;
        }
        acc
    }

    pub fn derivative(&self, var: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.powers[var] > 0)
            .map(|t| {
                let mut p = t.powers.clone();
                let c = t.coeff * p[var] as f64;
                p[var] -= 1;
                Term {
                    coeff: c,
                    powers: p,
                }
            })
            .collect();
        Polynomial {
            dim: self.dim,
            terms,
        }
        .simplified()
    }
}

/// A polynomial vector field with cached first and second derivatives.
#[derive(Debug, Clone)]
pub struct PolyField {
    components: Vec<Polynomial>,
    grad: Vec<Vec<Polynomial>>,
    hess: Vec<Vec<Vec<Polynomial>>>,
}

impl PolyField {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        let dim = components.first().map(|p| p.dim).unwrap_or(0);
        for c in &components {
            c.validate()?;
            if c.dim != dim {
                return Err(PesinError::Dimension("components differ in dimension".into()));
            }
        }
        let grad: Vec<Vec<Polynomial>> = components
            .iter()
            .map(|c| (0..dim).map(|j| c.derivative(j)).collect())
            .collect();
        let hess = grad
            .iter()
            .map(|row| {
                row.iter()
                    .map(|g| (0..dim).map(|k| g.derivative(k)).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            components,
            grad,
            hess,
        })
    }

    pub fn dim_in(&self) -> usize {
        self.components.first().map(|p| p.dim).unwrap_or(0)
    }

    pub fn dim_out(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x);
        }
    }

    /// Row-major `dim_out x dim_in`.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim_in();
        for (i, row) in self.grad.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                out[i * n + j] = g.eval(x);
            }
        }
    }

    /// Layout `(i, j, k)` row-major.
    pub fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim_in();
        for (i, rows) in self.hess.iter().enumerate() {
            for (j, row) in rows.iter().enumerate() {
                for (k, h) in row.iter().enumerate() {
                    out[(i * n + j) * n + k] = h.eval(x);
                }
            }
        }
    }

    pub fn hessian_is_zero(&self) -> bool {
        self.hess.iter().flatten().flatten().all(|p| p.is_zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_cubic() {
        // p(x, y) = x^3 - 2 x y + 5
        let p = Polynomial::new(2, vec![(1.0, vec![3, 0]), (-2.0, vec![1, 1]), (5.0, vec![0, 0])])
            .unwrap();
        assert_eq!(p.eval(&[2.0, 1.0]), 8.0 - 4.0 + 5.0);
        let px = p.derivative(0);
        assert_eq!(px.eval(&[2.0, 1.0]), 12.0 - 2.0);
        let pxx = px.derivative(0);
        assert_eq!(pxx.eval(&[2.0, 1.0]), 12.0);
        assert_eq!(p.degree(), 3);
    }

    #[test]
    fn like_terms_merge() {
        let p = Polynomial::new(1, vec![(1.0, vec![2]), (2.0, vec![2]), (-3.0, vec![2])]).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn wrong_arity_rejected() {
        assert!(Polynomial::new(2, vec![(1.0, vec![1])]).is_err());
    }
}
