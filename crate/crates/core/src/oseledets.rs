//! Lyapunov spectra and the stable/unstable splitting of a derivative cocycle.

use serde::{Deserialize, Serialize};

use crate::error::{PesinError, Result};
use crate::linalg::{log_abs_det, orthonormalize, principal_angle, Matrix, Vector};
use crate::rds::{guard, DerivOrder, DiffeoFamily, OmegaPrefix};
use crate::stats::{block_means, mean_se};

pub const DEFAULT_CLUSTER_GAP: f64 = 0.05;
pub const HALFWIDTH_BLOCKS: usize = 20;
const DEGENERATE_DIAGONAL: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Exponents in ascending order, nats per step.
    pub rho: Vec<f64>,
    /// Distinct exponents after gap clustering, ascending.
    pub lambda: Vec<f64>,
    #[serde(rename = "m")]
    pub multiplicities: Vec<usize>,
    #[serde(rename = "n")]
    pub n_used: usize,
    /// Two standard errors of the block means, matched to `rho`.
    pub halfwidth: Vec<f64>,
    /// `(1/n) Σ_k log|det D f_{θ_k}|` accumulated along the orbit.
    pub log_det_rate: f64,
}

impl SpectrumEstimate {
    /// `Σ_i λ_i⁺ m_i`.
    pub fn positive_sum(&self) -> f64 {
        self.lambda
            .iter()
            .zip(&self.multiplicities)
            .filter(|(l, _)| **l > 0.0)
            .map(|(l, m)| l * *m as f64)
            .fold(0.0, |acc, v| acc + v)
    }

    /// Half-width of `positive_sum`, from the exponents counted in it.
    pub fn positive_sum_halfwidth(&self) -> f64 {
        self.rho
            .iter()
            .zip(&self.halfwidth)
            .filter(|(r, _)| **r > 0.0)
            .map(|(_, h)| h * h)
            .sum::<f64>()
            .sqrt()
    }

    pub fn weighted_sum(&self) -> f64 {
        self.lambda
            .iter()
            .zip(&self.multiplicities)
            .map(|(l, m)| l * *m as f64)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumOptions {
    /// Steps between QR re-orthonormalizations.
    pub block: usize,
    pub cluster_gap: f64,
    /// Initial orthonormal frame (identity if absent).
    pub frame: Option<Matrix>,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            block: 1,
            cluster_gap: DEFAULT_CLUSTER_GAP,
            frame: None,
        }
    }
}

/// Greedy gap clustering of ascending exponents. `gap <= 0` keeps every value separate.
pub fn cluster_multiplicities(rho: &[f64], gap: f64) -> (Vec<f64>, Vec<usize>) {
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for &r in rho {
        match groups.last_mut() {
            Some(g) if gap > 0.0 && r - g[g.len() - 1] <= gap => g.push(r),
            _ => groups.push(vec![r]),
        }
    }
    let lambda = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let m = groups.iter().map(|g| g.len()).collect();
    (lambda, m)
}

pub fn lyapunov_spectrum<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    n: usize,
    block: usize,
) -> Result<SpectrumEstimate> {
    lyapunov_spectrum_with(
        family,
        omega,
        x,
        n,
        &SpectrumOptions {
            block,
            ..Default::default()
        },
    )
}

/// QR (Benettin) accumulation: the frame is pushed through the cocycle and
/// re-orthonormalized every `block` steps; exponents are the means of `log|R_ii|`.
pub fn lyapunov_spectrum_with<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    n: usize,
    opts: &SpectrumOptions,
) -> Result<SpectrumEstimate> {
    let d = family.dim();
    let block = opts.block.max(1);
    if n < 10 * block {
        return Err(PesinError::InvalidInput(format!(
            "need n >= 10·block ({n} < {})",
            10 * block
        )));
    }
    if n > omega.len() {
        return Err(PesinError::InvalidInput("noise prefix shorter than n".into()));
    }
    let mut q = match &opts.frame {
        Some(f) => orthonormalize(f)?,
        None => Matrix::identity(d, d),
    };
    if q.ncols() != d {
        return Err(PesinError::Dimension("initial frame must have d columns".into()));
    }
    let mut state = x.clone();
    guard(&state, 0)?;
    let mut log_det = Vec::with_capacity(n);
    // one row of log|R_ii| per QR event, in frame order
    let mut events: Vec<Vec<f64>> = Vec::with_capacity(n / block + 1);
    for k in 0..n {
        let theta = omega.record(family, k);
        let ev = family.eval(&theta, &state, DerivOrder::First)?;
        let j = ev.jacobian.ok_or_else(|| PesinError::Capability("jacobian".into()))?;
        log_det.push(log_abs_det(&j));
        q = j * q;
        state = ev.image;
        guard(&state, k + 1)?;
        if (k + 1) % block == 0 || k + 1 == n {
            let qr = q.qr();
            let r = qr.r();
            let mut row = Vec::with_capacity(d);
            for i in 0..d {
                let v = r[(i, i)].abs();
                if !(v > DEGENERATE_DIAGONAL) {
                    return Err(PesinError::Degeneracy(format!(
                        "R diagonal {i} vanished at step {k}; an exponent is -inf"
                    )));
                }
                row.push(v.ln());
            }
            events.push(row);
            q = qr.q();
        }
    }
    let mut raw: Vec<(f64, f64)> = (0..d)
        .map(|i| {
            let series: Vec<f64> = events.iter().map(|e| e[i]).collect();
            let rate = series.iter().sum::<f64>() / n as f64;
            // block means of per-step rates: each event covers `block` steps
            let per_step: Vec<f64> = series.iter().map(|v| v / block as f64).collect();
            let blocks = block_means(&per_step, HALFWIDTH_BLOCKS.min(per_step.len()));
            (rate, 2.0 * mean_se(&blocks).se)
        })
        .collect();
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rho: Vec<f64> = raw.iter().map(|r| r.0).collect();
    let halfwidth = raw.iter().map(|r| r.1).collect();
    let (lambda, multiplicities) = cluster_multiplicities(&rho, opts.cluster_gap);
    Ok(SpectrumEstimate {
        rho,
        lambda,
        multiplicities,
        n_used: n,
        halfwidth,
        log_det_rate: log_det.iter().sum::<f64>() / n as f64,
    })
}

/// `|(1/n) log|det D_x f^n_ω| - Σ λ_i m_i|`, with the log-determinant summed per step.
pub fn det_identity_residual<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    n: usize,
    spectrum: &SpectrumEstimate,
) -> Result<f64> {
    let jac = crate::rds::jacobian_cocycle(family, omega, x, n)?;
    let total: f64 = jac.iter().map(log_abs_det).sum();
    Ok((total / n as f64 - spectrum.weighted_sum()).abs())
}

#[derive(Debug, Clone)]
pub struct FiltrationEstimate {
    /// Orthonormal basis of the slow subspace (rates below `threshold`).
    pub e: Matrix,
    /// Orthonormal basis of `E^⊥`.
    pub h: Matrix,
    pub threshold: f64,
    /// Finite-n singular rates `(1/n) log s_i`, ascending.
    pub rates: Vec<f64>,
}

impl FiltrationEstimate {
    pub fn stable_dim(&self) -> usize {
        self.e.ncols()
    }
}

/// Splitting from the right-singular vectors of `D_x f^n_ω`.
///
/// The transpose product `J_0ᵀ ⋯ J_{n-1}ᵀ` is accumulated by QR steps, so its Q
/// factor approximates the right-singular vectors ordered by decreasing growth
/// without forming the (possibly overflowing) product. When the triangular
/// factor stays representable its SVD refines the basis.
pub fn stable_filtration<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    n: usize,
    a: f64,
    gap: f64,
) -> Result<FiltrationEstimate> {
    if n == 0 {
        return Err(PesinError::InvalidInput("n must be >= 1".into()));
    }
    let jac = crate::rds::jacobian_cocycle(family, omega, x, n)?;
    filtration_from_factors(&jac, family.dim(), a, gap)
}

/// Same as [`stable_filtration`] on an explicit list of factors `[J_0, …, J_{n-1}]`.
pub fn filtration_from_factors(
    factors: &[Matrix],
    d: usize,
    a: f64,
    gap: f64,
) -> Result<FiltrationEstimate> {
    let (basis, mut rates) = growth_frame(factors, d)?;
    if let Some(near) = rates.iter().find(|r| (*r - a).abs() <= gap) {
        return Err(PesinError::NoSpectralGap {
            threshold: a,
            nearest: *near,
            gap,
        });
    }
    let fast = rates.iter().filter(|r| **r >= a).count();
    let h = basis.columns(0, fast).into_owned();
    let e = basis.columns(fast, d - fast).into_owned();
    rates.reverse();
    Ok(FiltrationEstimate {
        e,
        h,
        threshold: a,
        rates,
    })
}

/// Orthonormal frame at the base point whose columns are ordered by decreasing
/// finite-n growth under `J_{n-1} ⋯ J_0`, with the matching rates `(1/n) log s_i`.
pub fn growth_frame(factors: &[Matrix], d: usize) -> Result<(Matrix, Vec<f64>)> {
    let n = factors.len();
    if n == 0 {
        return Err(PesinError::InvalidInput("no factors".into()));
    }
    let mut q = Matrix::identity(d, d);
    let mut r_total = Matrix::identity(d, d);
    let mut logs = vec![0.0; d];
    let mut representable = true;
    for j in factors.iter().rev() {
        let qr = (j.transpose() * &q).qr();
        let r = qr.r();
        for (i, l) in logs.iter_mut().enumerate() {
            let v = r[(i, i)].abs();
            if !(v > DEGENERATE_DIAGONAL) {
                return Err(PesinError::Degeneracy("singular cocycle in filtration".into()));
            }
            *l += v.ln();
        }
        if representable {
            r_total = r * r_total;
            representable = r_total.iter().all(|v| v.is_finite() && v.abs() < 1e250)
                && logs.iter().all(|l| l.abs() < 500.0);
        }
        q = qr.q();
    }
    if representable {
        let svd = r_total.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors");
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &k| svd.singular_values[k].total_cmp(&svd.singular_values[i]));
        let cols: Vec<Vector> = order.iter().map(|&i| &q * u.column(i)).collect();
        let rates = order
            .iter()
            .map(|&i| svd.singular_values[i].max(DEGENERATE_DIAGONAL).ln() / n as f64)
            .collect();
        Ok((Matrix::from_columns(&cols), rates))
    } else {
        // columns of an unconverged frame need not be sorted yet
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &k| logs[k].total_cmp(&logs[i]));
        let cols: Vec<Vector> = order.iter().map(|&i| q.column(i).into_owned()).collect();
        let rates = order.iter().map(|&i| logs[i] / n as f64).collect();
        Ok((Matrix::from_columns(&cols), rates))
    }
}

/// Smallest principal angle between two subspaces given by orthonormal bases.
pub fn subspace_angle(e: &Matrix, h: &Matrix) -> Result<f64> {
    for (name, b) in [("first", e), ("second", h)] {
        let gram = b.transpose() * b;
        if (gram - Matrix::identity(b.ncols(), b.ncols())).amax() > 1e-8 {
            return Err(PesinError::Degeneracy(format!(
                "{name} basis is not orthonormal (rank deficient or unnormalized)"
            )));
        }
    }
    Ok(principal_angle(e, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rds::LinearFamily;
    use crate::rng::StreamKey;
    use nalgebra::dvector;

    fn diag_cocycle() -> LinearFamily {
        LinearFamily::constant(Matrix::from_diagonal(&dvector![2.0, 0.5])).unwrap()
    }

    #[test]
    fn constant_diagonal_spectrum_is_exact() {
        let f = diag_cocycle();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 200);
        let s = lyapunov_spectrum(&f, &omega, &dvector![0.0, 0.0], 200, 1).unwrap();
        let l2 = 2f64.ln();
        assert!((s.rho[0] + l2).abs() < 1e-12 && (s.rho[1] - l2).abs() < 1e-12);
        assert_eq!(s.multiplicities, vec![1, 1]);
        assert!(det_identity_residual(&f, &omega, &dvector![0.0, 0.0], 200, &s).unwrap() < 1e-10);
        assert!((s.rho.iter().sum::<f64>() - s.log_det_rate).abs() < 1e-10);
    }

    #[test]
    fn cluster_examples() {
        let (l, m) = cluster_multiplicities(&[-0.7, -0.69, 0.69], 0.1);
        assert!((l[0] + 0.695).abs() < 1e-12 && (l[1] - 0.69).abs() < 1e-12);
        assert_eq!(m, vec![2, 1]);
        assert_eq!(cluster_multiplicities(&[0.3; 4], 0.05).1, vec![4]);
        assert_eq!(cluster_multiplicities(&[0.3, 0.3, 0.5], 0.0).1, vec![1, 1, 1]);
    }

    #[test]
    fn diagonal_filtration_axes() {
        let f = diag_cocycle();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 50);
        let fl = stable_filtration(&f, &omega, &dvector![0.0, 0.0], 50, 0.0, 0.05).unwrap();
        assert_eq!(fl.stable_dim(), 1);
        assert!((fl.e[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((fl.h[(0, 0)].abs() - 1.0).abs() < 1e-12);
        let all = stable_filtration(&f, &omega, &dvector![0.0, 0.0], 50, -2.0, 0.05).unwrap();
        assert_eq!(all.stable_dim(), 0);
        assert_eq!(all.h.ncols(), 2);
        assert!(matches!(
            stable_filtration(&f, &omega, &dvector![0.0, 0.0], 50, 0.69, 0.05),
            Err(PesinError::NoSpectralGap { .. })
        ));
    }

    #[test]
    fn rotated_filtration() {
        let t: f64 = 0.4;
        let q = Matrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        let a = &q * Matrix::from_diagonal(&dvector![2.0, 0.5]) * q.transpose();
        let f = LinearFamily::constant(a).unwrap();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 100);
        let fl = stable_filtration(&f, &omega, &dvector![0.0, 0.0], 100, 0.0, 0.05).unwrap();
        let slow = q.column(1).into_owned();
        let angle = subspace_angle(&fl.e, &Matrix::from_columns(&[slow])).unwrap();
        assert!(angle < 1e-6);
    }

    #[test]
    fn long_horizon_filtration_without_refinement() {
        let f = diag_cocycle();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 2000);
        let fl = stable_filtration(&f, &omega, &dvector![0.0, 0.0], 2000, 0.0, 0.05).unwrap();
        assert!((fl.e[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((fl.rates[1] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn angle_examples() {
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!((subspace_angle(&e1, &e2).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(subspace_angle(&e1, &e1).unwrap(), 0.0);
        let bad = Matrix::from_column_slice(2, 1, &[2.0, 0.0]);
        assert!(subspace_angle(&bad, &e1).is_err());
    }

    #[test]
    fn block_size_guard() {
        let f = diag_cocycle();
        let omega = OmegaPrefix::keyed(StreamKey::new(1, 0), 50);
        assert!(lyapunov_spectrum(&f, &omega, &dvector![0.0, 0.0], 50, 10).is_err());
    }
}
