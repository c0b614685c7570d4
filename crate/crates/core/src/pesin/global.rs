//! Finite-horizon membership in the global stable manifold.

use serde::{Deserialize, Serialize};

use crate::error::{PesinError, Result};
use crate::linalg::Vector;
use crate::rds::{compose, DiffeoFamily, OmegaPrefix};
use crate::stats::linear_fit;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    /// Slope of `log|f^n x − f^n y|` over the trailing window.
    pub rate: f64,
    pub rate_se: f64,
    /// `y = x`: member by convention.
    pub degenerate: bool,
    /// One of the orbits left the bounded region.
    pub diverged: bool,
    pub window: usize,
}

/// `y ∈ W^s(ω, x)` iff the trailing-window slope of the log distance is below `cutoff < 0`.
/// Distances that underflow to zero count as members.
pub fn global_membership<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    y: &Vector,
    horizon: usize,
    cutoff: f64,
    window: usize,
) -> Result<Membership> {
    if !(cutoff < 0.0) {
        return Err(PesinError::InvalidInput("rate cutoff must be negative".into()));
    }
    if window < 2 || window > horizon + 1 {
        return Err(PesinError::InvalidInput(format!(
            "window {window} must lie in [2, horizon + 1]"
        )));
    }
    if x == y {
        return Ok(Membership {
            member: true,
            rate: f64::NEG_INFINITY,
            rate_se: 0.0,
            degenerate: true,
            diverged: false,
            window,
        });
    }
    let orbits = compose(family, omega, x, horizon).and_then(|a| Ok((a, compose(family, omega, y, horizon)?)));
    let (ox, oy) = match orbits {
        Ok(o) => o,
        Err(PesinError::Divergence { .. }) => {
            return Ok(Membership {
                member: false,
                rate: f64::INFINITY,
                rate_se: 0.0,
                degenerate: false,
                diverged: true,
                window,
            })
        }
        Err(e) => return Err(e),
    };
    let dist: Vec<f64> = ox.iter().zip(&oy).map(|(a, b)| (a - b).norm()).collect();
    if dist.contains(&0.0) {
        return Ok(Membership {
            member: true,
            rate: f64::NEG_INFINITY,
            rate_se: 0.0,
            degenerate: false,
            diverged: false,
            window,
        });
    }
    let ns: Vec<f64> = (horizon + 1 - window..=horizon).map(|n| n as f64).collect();
    let logs: Vec<f64> = dist[horizon + 1 - window..].iter().map(|v| v.ln()).collect();
    let fit = linear_fit(&ns, &logs);
    Ok(Membership {
        member: fit.slope < cutoff,
        rate: fit.slope,
        rate_se: fit.slope_se,
        degenerate: false,
        diverged: false,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::rds::LinearFamily;
    use nalgebra::dvector;

    fn setup() -> (LinearFamily, OmegaPrefix) {
        (
            LinearFamily::constant(Matrix::from_diagonal(&dvector![0.5, 2.0])).unwrap(),
            OmegaPrefix::constant(vec![0.0], 30),
        )
    }

    #[test]
    fn stable_direction_is_member() {
        let (fam, omega) = setup();
        let x = dvector![0.0, 0.0];
        let m = global_membership(&fam, &omega, &x, &dvector![1.0, 0.0], 30, -0.1, 10).unwrap();
        assert!(m.member);
        assert!((m.rate + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn unstable_direction_is_not() {
        let (fam, omega) = setup();
        let x = dvector![0.0, 0.0];
        let m = global_membership(&fam, &omega, &x, &dvector![0.0, 1.0], 30, -0.1, 10).unwrap();
        assert!(!m.member);
        assert!((m.rate - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn equal_points_are_degenerate_members() {
        let (fam, omega) = setup();
        let x = dvector![0.3, 0.0];
        let m = global_membership(&fam, &omega, &x, &x, 30, -0.1, 10).unwrap();
        assert!(m.member && m.degenerate);
    }

    #[test]
    fn divergence_is_flagged() {
        let fam = LinearFamily::constant(Matrix::from_diagonal(&dvector![0.5, 1e3])).unwrap();
        let omega = OmegaPrefix::constant(vec![0.0], 30);
        let m = global_membership(&fam, &omega, &dvector![0.0, 0.0], &dvector![0.0, 1.0], 30, -0.1, 10)
            .unwrap();
        assert!(!m.member && m.diverged);
    }
}
