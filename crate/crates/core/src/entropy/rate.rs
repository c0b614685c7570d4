//! Entropy rate as the trailing-window slope of `Ĥ_n` against `n`.

use serde::{Deserialize, Serialize};

use super::curve::EntropyCurve;
use crate::error::{PesinError, Result};
use crate::stats::linear_fit;

pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Nats per step.
    pub rate: f64,
    pub se: f64,
    /// Slope before clamping.
    pub raw_slope: f64,
    /// Set when a slope more than 3 SE below zero was replaced by 0.
    pub clamped: bool,
    pub window: usize,
}

/// Least-squares slope over the last `window` points.
///
/// The SE combines the regression error with the endpoint error
/// `sqrt(SE_first² + SE_last²) / (n_last - n_first)`, which bounds the
/// sampling error of the slope when the point errors are correlated.
pub fn entropy_rate(curve: &EntropyCurve, window: usize) -> Result<RateEstimate> {
    curve.validate()?;
    if window < 2 || curve.points.len() < window + 2 {
        return Err(PesinError::InvalidInput(format!(
            "rate window {window} needs at least {} curve points, got {}",
            window.max(2) + 2,
            curve.points.len()
        )));
    }
    let tail = &curve.points[curve.points.len() - window..];
    let x: Vec<f64> = tail.iter().map(|p| p.n as f64).collect();
    let y: Vec<f64> = tail.iter().map(|p| p.h).collect();
    let fit = linear_fit(&x, &y);
    let (first, last) = (tail[0], tail[window - 1]);
    let endpoint = (first.se.powi(2) + last.se.powi(2)).sqrt() / (last.n - first.n) as f64;
    let se = (fit.slope_se.powi(2) + endpoint.powi(2)).sqrt();
    let clamped = fit.slope < -3.0 * se;
    Ok(RateEstimate {
        rate: if clamped { 0.0 } else { fit.slope },
        se,
        raw_slope: fit.slope,
        clamped,
        window,
    })
}
