//! Box partitions of R^d: `g^d` equal cells plus one unbounded complement cell.

use serde::{Deserialize, Serialize};

use crate::error::{PesinError, Result};
use crate::linalg::Vector;

/// Largest supported number of cells, so cell ids fit in `u32`.
pub const MAX_CELLS: u64 = u32::MAX as u64;

/// Default box half-width in sample standard deviations.
pub const DEFAULT_BOX_SD: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub center: Vec<f64>,
    /// Half-width of the box per axis.
    pub radius: f64,
    /// Cells per axis.
    pub g: usize,
}

impl PartitionSpec {
    pub fn new(center: Vec<f64>, radius: f64, g: usize) -> Result<Self> {
        if center.is_empty() || !(radius > 0.0 && radius.is_finite()) || g == 0 {
            return Err(PesinError::InvalidInput(
                "partition needs d >= 1, a positive finite radius and g >= 1".into(),
            ));
        }
        let spec = Self { center, radius, g };
        let bounded = (g as u64).checked_pow(spec.dim() as u32);
        match bounded {
            Some(b) if b < MAX_CELLS => Ok(spec),
            _ => Err(PesinError::InvalidInput(format!(
                "g^d = {g}^{} cells exceeds the supported maximum",
                spec.dim()
            ))),
        }
    }

    /// Box centered at the sample mean with half-width `sd_multiple` times the
    /// largest per-axis sample standard deviation.
    pub fn fit(samples: &[Vector], g: usize, sd_multiple: f64) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(PesinError::InvalidInput("no samples to fit a partition box".into()));
        };
        let d = first.len();
        let m = samples.len() as f64;
        let center: Vec<f64> = (0..d)
            .map(|i| samples.iter().map(|x| x[i]).sum::<f64>() / m)
            .collect();
        let sd = (0..d)
            .map(|i| {
                let v = samples.iter().map(|x| (x[i] - center[i]).powi(2)).sum::<f64>()
                    / (m - 1.0).max(1.0);
                v.sqrt()
            })
            .fold(0.0, f64::max);
        // a point mass still needs a box of positive width
        let radius = if sd > 0.0 { sd_multiple * sd } else { 1.0 };
        Self::new(center, radius, g)
    }

    /// Same box, different resolution.
    pub fn with_g(&self, g: usize) -> Result<Self> {
        Self::new(self.center.clone(), self.radius, g)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `g^d`.
    pub fn bounded_cells(&self) -> usize {
        self.g.pow(self.dim() as u32)
    }

    /// `g^d + 1`.
    pub fn cell_count(&self) -> usize {
        self.bounded_cells() + 1
    }

    /// Id of the complement cell.
    pub fn unbounded_cell(&self) -> u32 {
        self.bounded_cells() as u32
    }

    /// Cell id of `x`; total on R^d. Boxes are half-open `[lo, hi)` per axis
    /// except the last, which is closed.
    pub fn cell(&self, x: &[f64]) -> u32 {
        let width = 2.0 * self.radius / self.g as f64;
        let mut id = 0usize;
        let mut stride = 1usize;
        for (xi, ci) in x.iter().zip(&self.center) {
            let u = xi - ci + self.radius;
            if !(u >= 0.0 && u <= 2.0 * self.radius) {
                return self.unbounded_cell();
            }
            let k = ((u / width) as usize).min(self.g - 1);
            id += k * stride;
            stride *= self.g;
        }
        id as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn lookup_is_total_with_g_d_plus_one_cells() {
        let p = PartitionSpec::new(vec![0.0, 0.0], 1.0, 4).unwrap();
        assert_eq!(p.cell_count(), 17);
        let mut seen = std::collections::BTreeSet::new();
        for i in -30..=30 {
            for j in -30..=30 {
                let c = p.cell(&[i as f64 * 0.05, j as f64 * 0.05]);
                assert!((c as usize) < p.cell_count());
                seen.insert(c);
            }
        }
        assert_eq!(seen.len(), 17);
        assert_eq!(p.cell(&[f64::NAN, 0.0]), p.unbounded_cell());
        assert_eq!(p.cell(&[1.0, 1.0]), 15);
        assert_eq!(p.cell(&[-1.0, -1.0]), 0);
    }

    #[test]
    fn fitted_box_uses_sample_spread() {
        let xs = vec![dvector![-1.0], dvector![1.0]];
        let p = PartitionSpec::fit(&xs, 2, 6.0).unwrap();
        assert_eq!(p.center, vec![0.0]);
        assert!((p.radius - 6.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn oversized_resolution_rejected() {
        assert!(PartitionSpec::new(vec![0.0; 4], 1.0, 1 << 10).is_err());
        assert!(PartitionSpec::new(vec![0.0], 1.0, 0).is_err());
    }
}
