//! Pesin-set parameters and the constants derived from them.

use serde::{Deserialize, Serialize};

/// Relative slack allowed when `ε` sits exactly on its upper bound.
const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PesinParams {
    /// Lower end of the exponent window, nats per step.
    pub a: f64,
    /// Upper end of the exponent window, nats per step.
    pub b: f64,
    /// Stable dimension.
    pub k: usize,
    pub eps: f64,
    /// Cap `l′` on the function `l`.
    pub l_cap: f64,
    /// Cap `r′` on the function `r`.
    pub r_cap: f64,
    /// Cap `C′` on `C_ε`.
    pub c_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Short form of the violated constraint, e.g. `"a < b"`.
    pub constraint: String,
    pub detail: String,
}

impl Violation {
    fn new(constraint: &str, detail: String) -> Self {
        Self {
            constraint: constraint.into(),
            detail,
        }
    }
}

/// Largest admissible `ε` for a window `[a, b]` in dimension `d`.
pub fn eps_bound(a: f64, b: f64, d: usize) -> f64 {
    1.0f64.min((b - a) / (200.0 * d as f64))
}

/// Checks every invariant of [`PesinParams`]; violations come back in the order
/// the constraints are listed, so the first entry is the first violated one.
pub fn validate_params(p: &PesinParams, d: usize) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let finite = [p.a, p.b, p.eps, p.l_cap, p.r_cap, p.c_cap]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        out.push(Violation::new("finite", "all parameters must be finite".into()));
        return Err(out);
    }
    if !(p.a < p.b) {
        out.push(Violation::new("a < b", format!("a = {}, b = {}", p.a, p.b)));
    }
    if p.b > 0.0 {
        out.push(Violation::new("b ≤ 0", format!("b = {}", p.b)));
    }
    if !(p.eps > 0.0) {
        out.push(Violation::new("ε > 0", format!("ε = {}", p.eps)));
    }
    if p.eps > 1.0 * (1.0 + BOUNDARY_TOL) {
        out.push(Violation::new("ε ≤ 1", format!("ε = {}", p.eps)));
    }
    if p.a < p.b && d > 0 {
        let bound = (p.b - p.a) / (200.0 * d as f64);
        if p.eps > bound * (1.0 + BOUNDARY_TOL) {
            out.push(Violation::new(
                "ε ≤ (b−a)/(200d)",
                format!("ε = {}, bound = {bound}", p.eps),
            ));
        }
    }
    if p.k < 1 || p.k > d {
        out.push(Violation::new("1 ≤ k ≤ d", format!("k = {}, d = {d}", p.k)));
    }
    for (name, v) in [("l′ ≥ 1", p.l_cap), ("r′ ≥ 1", p.r_cap), ("C′ ≥ 1", p.c_cap)] {
        if v < 1.0 {
            out.push(Violation::new(name, format!("value {v}")));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Comparison constant `A = 4 (l′)² (1 − e^{−2ε})^{−1/2}`.
pub fn comparison_constant(l_cap: f64, eps: f64) -> f64 {
    4.0 * l_cap * l_cap / (1.0 - (-2.0 * eps).exp()).sqrt()
}

/// Constants entering the local stable-manifold construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartConstants {
    /// `A`
    pub a_const: f64,
    /// `ε₀ = e^{a+4ε} − e^{a+2ε}`
    pub eps0: f64,
    /// `c₀ = 4 A r′ e^{2ε}`
    pub c0: f64,
    /// `r₀ = ε₀ / c₀`
    pub r0: f64,
}

pub fn chart_constants(p: &PesinParams) -> ChartConstants {
    let a_const = comparison_constant(p.l_cap, p.eps);
    let eps0 = (p.a + 4.0 * p.eps).exp() - (p.a + 2.0 * p.eps).exp();
    let c0 = 4.0 * a_const * p.r_cap * (2.0 * p.eps).exp();
    ChartConstants {
        a_const,
        eps0,
        c0,
        r0: eps0 / c0,
    }
}

/// Chart radius, Lipschitz bound and contraction constant at level `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartScales {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ChartScales {
    /// `α_{n} = α_0 e^{−5εn}`, `β_{n} = β_0 e^{7εn}`, `γ_{n} = γ_0 e^{2εn}`.
    pub fn at_level(&self, eps: f64, n: usize) -> ChartScales {
        let n = n as f64;
        ChartScales {
            alpha: self.alpha * (-5.0 * eps * n).exp(),
            beta: self.beta * (7.0 * eps * n).exp(),
            gamma: self.gamma * (2.0 * eps * n).exp(),
        }
    }
}

/// Terms needed so a geometric series with ratio `rho` has tail below `tol` relative to its sum:
/// `L = ceil(log(tol (1 − ρ)) / log ρ)`.
pub fn series_truncation(rho: f64, tol: f64) -> usize {
    if rho <= 0.0 {
        return 1;
    }
    assert!(rho < 1.0, "series ratio must be below 1");
    ((tol * (1.0 - rho)).ln() / rho.ln()).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn boundary_eps_is_accepted() {
        let eps = (-0.5 - -1.0) / (200.0 * 2.0);
        assert_eq!(eps, 0.00125);
        assert!(validate_params(&params(-1.0, -0.5, eps), 2).is_ok());
        assert!(validate_params(&params(-1.0, -0.5, eps * 1.01), 2).is_err());
    }

    #[test]
    fn violations_are_named() {
        let v = validate_params(&params(-300.0, 0.0, 1.5), 1).unwrap_err();
        assert_eq!(v[0].constraint, "ε ≤ 1");
        let v = validate_params(&params(-1.0, -1.0, 0.001), 1).unwrap_err();
        assert_eq!(v[0].constraint, "a < b");
        let mut p = params(-1.0, -0.5, 0.001);
        p.k = 3;
        p.r_cap = 0.5;
        let v = validate_params(&p, 2).unwrap_err();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn comparison_constant_value() {
        let a = comparison_constant(1.0, 0.5);
        assert!((a - 5.031066).abs() < 1e-6, "{a}");
    }

    #[test]
    fn scale_recursion() {
        let s = ChartScales {
            alpha: 0.2,
            beta: 1.0,
            gamma: 1.0,
        };
        let s3 = s.at_level(0.1, 3);
        assert!((s3.alpha - 0.0446260).abs() < 1e-7);
        assert!((s3.beta - (2.1f64).exp()).abs() < 1e-12);
        assert!((s3.gamma - (0.6f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn truncation_length() {
        let rho = (-0.24f64).exp();
        let l = series_truncation(rho, 1e-10);
        assert_eq!(l, 103);
        assert!(rho.powi(l as i32) <= 1e-10 * (1.0 - rho));
    }
}
