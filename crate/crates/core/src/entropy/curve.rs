//! Itinerary coding and Monte Carlo join entropies `Ĥ_n`.

use serde::{Deserialize, Serialize};

use super::cells::PartitionSpec;
use crate::error::{PesinError, Result};
use crate::linalg::Vector;
use crate::parallel::{pairwise_sum, try_map_indexed};
use crate::rds::{guard, DiffeoFamily, MeasureRepr, OmegaPrefix};
use crate::rng::StreamKey;
use crate::stats::mean_se;

/// Smallest number of state samples per noise realization.
pub const MIN_STATE_SAMPLES: usize = 1000;

/// Largest orbit bundle kept in memory.
pub const MEMORY_BUDGET_BYTES: usize = 1 << 31;

/// Stray mass above this fraction is a coverage error.
pub const COVERAGE_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasCorrection {
    None,
    #[default]
    MillerMadow,
    Jackknife,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "SE")]
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurve {
    pub points: Vec<CurvePoint>,
    pub m_omega: usize,
    pub m_x: usize,
    pub g: usize,
    pub bias: BiasCorrection,
    /// Fraction of coded positions that fell in the unbounded cell.
    pub stray_fraction: f64,
}

impl EntropyCurve {
    /// Checks `n` strictly increasing and `Ĥ_n >= 0`.
    pub fn validate(&self) -> Result<()> {
        if self.points.windows(2).any(|w| w[1].n <= w[0].n) {
            return Err(PesinError::InvalidInput("curve n must be strictly increasing".into()));
        }
        if self.points.iter().any(|p| !(p.h >= 0.0)) {
            return Err(PesinError::InvalidInput("curve values must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn csv_header() -> &'static str {
        "n,H,SE,Momega,Mx,g"
    }

    /// Rows without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{},{},{}\n",
                p.n, p.h, p.se, self.m_omega, self.m_x, self.g
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::csv_header(), self.csv_rows())
    }
}

/// Orbit segments `(x, f¹_ω x, ..., f^{n-1}_ω x)` for `M_x` states under each of `M_ω` realizations.
#[derive(Debug, Clone)]
pub struct OrbitBundle {
    dim: usize,
    len: usize,
    m_x: usize,
    /// Per realization, row-major `[sample][time][axis]`.
    replicates: Vec<Vec<f64>>,
}

impl OrbitBundle {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m_x(&self) -> usize {
        self.m_x
    }

    pub fn m_omega(&self) -> usize {
        self.replicates.len()
    }

    /// Time-0 states of every realization.
    pub fn initial_points(&self) -> Vec<Vector> {
        let stride = self.len * self.dim;
        self.replicates
            .iter()
            .flat_map(|r| {
                r.chunks(stride)
                    .map(|s| Vector::from_column_slice(&s[..self.dim]))
            })
            .collect()
    }

    /// Itinerary codes per realization, row-major `[sample][time]`.
    pub fn code(&self, xi: &PartitionSpec) -> Result<Vec<Vec<u32>>> {
        if xi.dim() != self.dim {
            return Err(PesinError::Dimension("partition and orbit dimensions differ".into()));
        }
        Ok(self
            .replicates
            .iter()
            .map(|r| r.chunks(self.dim).map(|x| xi.cell(x)).collect())
            .collect())
    }

    /// Entropy curve for `n = 1, ..., len` under the partition `xi`.
    pub fn curve(&self, xi: &PartitionSpec, bias: BiasCorrection) -> Result<EntropyCurve> {
        let codes = self.code(xi)?;
        let stray = xi.unbounded_cell();
        let total = (self.m_omega() * self.m_x * self.len).max(1);
        let strays: usize = codes
            .iter()
            .map(|c| c.iter().filter(|&&v| v == stray).count())
            .sum();
        let stray_fraction = strays as f64 / total as f64;
        if stray_fraction > COVERAGE_LIMIT {
            return Err(PesinError::Coverage { stray_fraction });
        }
        let mut curve = curve_from_codes(&codes, self.m_x, self.len, bias, xi.g)?;
        curve.stray_fraction = stray_fraction;
        Ok(curve)
    }
}

fn check_budget(m_omega: usize, m_x: usize, n: usize, d: usize) -> Result<()> {
    let bytes = m_omega
        .checked_mul(m_x)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_mul(d))
        .and_then(|v| v.checked_mul(8));
    match bytes {
        Some(b) if b <= MEMORY_BUDGET_BYTES => Ok(()),
        _ => Err(PesinError::InvalidInput(format!(
            "orbit bundle M_ω·M_x·n·d = {m_omega}·{m_x}·{n}·{d} exceeds the memory budget"
        ))),
    }
}

/// Simulates `M_x` μ-samples along each of `M_ω` keyed noise realizations.
///
/// Realization `r` uses the stream `key.child(r)` both for its noise records
/// and for its state samples.
pub fn simulate_orbits<F: DiffeoFamily + ?Sized>(
    family: &F,
    mu: &MeasureRepr,
    n: usize,
    m_omega: usize,
    m_x: usize,
    key: StreamKey,
) -> Result<OrbitBundle> {
    let d = family.dim();
    if mu.dim() != d {
        return Err(PesinError::Dimension("measure and family dimensions differ".into()));
    }
    if n == 0 || m_omega == 0 {
        return Err(PesinError::InvalidInput("need n >= 1 and M_ω >= 1".into()));
    }
    if m_x < MIN_STATE_SAMPLES {
        return Err(PesinError::InvalidInput(format!(
            "M_x = {m_x} is below the minimum {MIN_STATE_SAMPLES}"
        )));
    }
    check_budget(m_omega, m_x, n, d)?;
    let replicates = try_map_indexed(m_omega, |r| {
        let rk = key.child(r as u64);
        let omega = OmegaPrefix::keyed(rk, n).materialize(family);
        let thetas: Vec<Vec<f64>> = (0..n).map(|k| omega.record(family, k)).collect();
        let mut out = Vec::with_capacity(m_x * n * d);
        for j in 0..m_x {
            let mut x = mu.sample(rk, j as u64);
            guard(&x, 0)?;
            out.extend(x.iter());
            for (k, theta) in thetas.iter().take(n - 1).enumerate() {
                x = family.apply(theta, &x)?;
                guard(&x, k + 1)?;
                out.extend(x.iter());
            }
        }
        Ok(out)
    })?;
    Ok(OrbitBundle {
        dim: d,
        len: n,
        m_x,
        replicates,
    })
}

#[derive(Debug, Clone, Copy)]
struct BlockEntropy {
    h: f64,
    /// Delta-method variance of the plug-in estimate.
    var: f64,
}

/// Entropies of the length-`L` prefixes of `m` itineraries of length `len`,
/// for `L = 1, ..., len`.
fn block_entropies(codes: &[u32], m: usize, len: usize, bias: BiasCorrection) -> Vec<BlockEntropy> {
    let row = |j: usize| &codes[j * len..(j + 1) * len];
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| row(a).cmp(row(b)).then(a.cmp(&b)));
    // lcp[i] = common prefix length of sorted rows i-1 and i
    let lcp: Vec<usize> = (0..m)
        .map(|i| {
            if i == 0 {
                0
            } else {
                row(order[i - 1])
                    .iter()
                    .zip(row(order[i]))
                    .take_while(|(a, b)| a == b)
                    .count()
            }
        })
        .collect();
    let mf = m as f64;
    (1..=len)
        .map(|l| {
            let mut counts = Vec::new();
            let mut run = 0usize;
            for (i, &c) in lcp.iter().enumerate() {
                if i > 0 && c < l {
                    counts.push(run);
                    run = 0;
                }
                run += 1;
            }
            counts.push(run);
            count_entropy(&counts, mf, bias)
        })
        .collect()
}

fn xlogx(c: f64) -> f64 {
    if c > 0.0 {
        c * c.ln()
    } else {
        0.0
    }
}

fn count_entropy(counts: &[usize], m: f64, bias: BiasCorrection) -> BlockEntropy {
    let s = pairwise_sum(&counts.iter().map(|&c| xlogx(c as f64)).collect::<Vec<_>>());
    let plug_in = (m.ln() - s / m).max(0.0);
    let second = pairwise_sum(
        &counts
            .iter()
            .map(|&c| {
                let p = c as f64 / m;
                p * p.ln() * p.ln()
            })
            .collect::<Vec<_>>(),
    );
    let var = ((second - plug_in * plug_in) / m).max(0.0);
    let h = match bias {
        BiasCorrection::None => plug_in,
        BiasCorrection::MillerMadow => plug_in + (counts.len() as f64 - 1.0) / (2.0 * m),
        BiasCorrection::Jackknife => {
            if m < 2.0 {
                plug_in
            } else {
                let loo = pairwise_sum(
                    &counts
                        .iter()
                        .map(|&c| {
                            let c = c as f64;
                            let s_minus = s - xlogx(c) + xlogx(c - 1.0);
                            c * ((m - 1.0).ln() - s_minus / (m - 1.0))
                        })
                        .collect::<Vec<_>>(),
                );
                (m * plug_in - (m - 1.0) / m * loo).max(0.0)
            }
        }
    };
    BlockEntropy { h, var }
}

/// Entropy curve from precomputed itineraries: `codes[r]` holds `m_x` rows of
/// `len` cell ids for realization `r`.
///
/// The standard error is taken across realizations; with a single realization
/// the delta-method error of the plug-in estimate is used.
pub fn curve_from_codes(
    codes: &[Vec<u32>],
    m_x: usize,
    len: usize,
    bias: BiasCorrection,
    g: usize,
) -> Result<EntropyCurve> {
    if codes.is_empty() || m_x == 0 || len == 0 {
        return Err(PesinError::InvalidInput("empty itinerary set".into()));
    }
    if codes.iter().any(|c| c.len() != m_x * len) {
        return Err(PesinError::Dimension("itinerary block has the wrong size".into()));
    }
    let per_rep: Vec<Vec<BlockEntropy>> = try_map_indexed(codes.len(), |r| {
        Ok(block_entropies(&codes[r], m_x, len, bias))
    })?;
    let points = (0..len)
        .map(|l| {
            let hs: Vec<f64> = per_rep.iter().map(|v| v[l].h).collect();
            let ms = mean_se(&hs);
            let se = if codes.len() > 1 {
                ms.se
            } else {
                per_rep[0][l].var.sqrt()
            };
            CurvePoint {
                n: l + 1,
                h: ms.mean,
                se,
            }
        })
        .collect();
    Ok(EntropyCurve {
        points,
        m_omega: codes.len(),
        m_x,
        g,
        bias,
        stray_fraction: 0.0,
    })
}

/// Entropy curve `Ĥ_1, ..., Ĥ_{n_max}` for a family, a measure and a box partition.
#[allow(clippy::too_many_arguments)]
pub fn entropy_curve<F: DiffeoFamily + ?Sized>(
    family: &F,
    mu: &MeasureRepr,
    xi: &PartitionSpec,
    n_max: usize,
    m_omega: usize,
    m_x: usize,
    bias: BiasCorrection,
    key: StreamKey,
) -> Result<EntropyCurve> {
    check_budget(m_omega, m_x, n_max, xi.dim())?;
    simulate_orbits(family, mu, n_max, m_omega, m_x, key)?.curve(xi, bias)
}

/// `Ĥ_n` with its standard error, Miller–Madow corrected.
pub fn itinerary_entropy<F: DiffeoFamily + ?Sized>(
    family: &F,
    mu: &MeasureRepr,
    xi: &PartitionSpec,
    n: usize,
    m_omega: usize,
    m_x: usize,
    key: StreamKey,
) -> Result<CurvePoint> {
    let curve = entropy_curve(
        family,
        mu,
        xi,
        n,
        m_omega,
        m_x,
        BiasCorrection::MillerMadow,
        key,
    )?;
    Ok(curve.points[n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rds::{LinearFamily, UniformBox};
    use crate::linalg::Matrix;
    use nalgebra::dvector;

    fn identity_1d() -> LinearFamily {
        LinearFamily::constant(Matrix::identity(1, 1)).unwrap()
    }

    fn uniform_unit() -> MeasureRepr {
        MeasureRepr::analytic(UniformBox::new(dvector![-1.0], dvector![1.0]).unwrap())
    }

    #[test]
    fn single_box_has_zero_entropy() {
        let xi = PartitionSpec::new(vec![0.0], 10.0, 1).unwrap();
        let p = itinerary_entropy(&identity_1d(), &uniform_unit(), &xi, 3, 4, 1000, StreamKey::new(1, 0))
            .unwrap();
        assert_eq!(p.h, 0.0);
        assert_eq!(p.se, 0.0);
    }

    #[test]
    fn two_equal_cells_give_log_two() {
        let xi = PartitionSpec::new(vec![0.0], 1.0, 2).unwrap();
        let p = itinerary_entropy(&identity_1d(), &uniform_unit(), &xi, 1, 8, 4000, StreamKey::new(2, 0))
            .unwrap();
        let se = p.se.max(1e-4);
        assert!((p.h - 2f64.ln()).abs() < 3.0 * se, "{} ± {}", p.h, p.se);
    }

    #[test]
    fn coverage_error_when_box_misses_the_mass() {
        let xi = PartitionSpec::new(vec![5.0], 1.0, 4).unwrap();
        let err = itinerary_entropy(&identity_1d(), &uniform_unit(), &xi, 1, 2, 1000, StreamKey::new(3, 0))
            .unwrap_err();
        assert!(matches!(err, PesinError::Coverage { .. }));
    }

    #[test]
    fn too_few_state_samples_rejected() {
        let xi = PartitionSpec::new(vec![0.0], 1.0, 2).unwrap();
        assert!(itinerary_entropy(&identity_1d(), &uniform_unit(), &xi, 1, 2, 999, StreamKey::new(4, 0)).is_err());
    }

    #[test]
    fn estimators_agree_on_uniform_counts() {
        let counts = vec![250usize; 4];
        for bias in [BiasCorrection::None, BiasCorrection::MillerMadow, BiasCorrection::Jackknife] {
            let e = count_entropy(&counts, 1000.0, bias);
            assert!((e.h - 4f64.ln()).abs() < 5e-3, "{bias:?} {}", e.h);
        }
        let e = count_entropy(&counts, 1000.0, BiasCorrection::MillerMadow);
        assert!((e.h - 4f64.ln() - 3.0 / 2000.0).abs() < 1e-12);
    }

    #[test]
    fn prefix_counts_from_sorted_rows() {
        // rows 00, 01, 01, 11
        let codes = vec![0, 0, 0, 1, 0, 1, 1, 1];
        let b = block_entropies(&codes, 4, 2, BiasCorrection::None);
        let h1 = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        let h2 = -(2.0 * 0.25 * 0.25f64.ln() + 0.5 * 0.5f64.ln());
        assert!((b[0].h - h1).abs() < 1e-12);
        assert!((b[1].h - h2).abs() < 1e-12);
    }
}
