//! Time-scaling check `h(ν_t) = t·h(ν)` by exact enumeration.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::partition::{kifer_n_step_capped, FiniteMeasure, FinitePartition, FiniteRds, DEFAULT_ENUMERATION_CAP};

/// Rates below this are treated as zero when forming the ratio.
pub const ZERO_RATE: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub t: usize,
    /// Composed steps of the `t`-step system.
    pub n: usize,
    /// Per-step rate of the 1-step system over `n·t` steps.
    pub rate_one: f64,
    /// Per-composed-step rate of the `t`-step system divided by `t`.
    pub rate_t: f64,
    /// `rate_t / rate_one`; 1 when both rates vanish.
    pub ratio: f64,
    pub degenerate: bool,
}

pub fn scaling_check(
    rds: &FiniteRds,
    xi: &FinitePartition,
    mu: &FiniteMeasure,
    n: usize,
    t: usize,
) -> Result<ScalingResult> {
    scaling_check_capped(rds, xi, mu, n, t, DEFAULT_ENUMERATION_CAP)
}

pub fn scaling_check_capped(
    rds: &FiniteRds,
    xi: &FinitePartition,
    mu: &FiniteMeasure,
    n: usize,
    t: usize,
    cap: u64,
) -> Result<ScalingResult> {
    let composed = rds.power(t, cap)?;
    let rate_one = kifer_n_step_capped(rds, xi, mu, n * t, cap)?;
    let rate_t = kifer_n_step_capped(&composed, xi, mu, n, cap)? / t as f64;
    let degenerate = rate_one.abs() < ZERO_RATE && rate_t.abs() < ZERO_RATE;
    let ratio = if degenerate { 1.0 } else { rate_t / rate_one };
    Ok(ScalingResult {
        t,
        n,
        rate_one,
        rate_t,
        ratio,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::PesinError;

    fn constant_maps() -> FiniteRds {
        FiniteRds::new(2, vec![vec![0, 0], vec![1, 1]], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn unit_time_ratio_is_exactly_one() {
        let rds = FiniteRds::new(3, vec![vec![1, 2, 0], vec![0, 0, 2]], vec![0.3, 0.7]).unwrap();
        let r = scaling_check(&rds, &FinitePartition::discrete(3), &FiniteMeasure::uniform(3), 4, 1)
            .unwrap();
        assert_eq!(r.ratio, 1.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn permutation_system_is_degenerate() {
        let rds = FiniteRds::deterministic(vec![1, 2, 3, 0]).unwrap();
        let r = scaling_check(&rds, &FinitePartition::trivial(4), &FiniteMeasure::uniform(4), 3, 2)
            .unwrap();
        assert!(r.degenerate);
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn two_map_system_scales() {
        let r = scaling_check(&constant_maps(), &FinitePartition::discrete(2), &FiniteMeasure::uniform(2), 3, 2)
            .unwrap();
        assert!((r.ratio - 1.0).abs() < 0.05, "{}", r.ratio);
        assert!((r.rate_one - 2f64.ln() / 6.0).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let err = scaling_check_capped(&constant_maps(), &FinitePartition::discrete(2), &FiniteMeasure::uniform(2), 8, 2, 100)
            .unwrap_err();
        assert!(matches!(err, PesinError::EnumerationCap { .. }));
    }
}
