//! Monte Carlo audits of the integrability conditions on `(ν, μ)`.
//!
//! Integrability cannot be decided from samples. Each audited quantity gets a
//! mean, a standard error, a Hill tail index and the decay rate of its SE
//! across sample-size doublings, summarized as `finite-consistent` or
//! `heavy-tail-suspect`.

use serde::{Deserialize, Serialize};

use crate::error::{PesinError, Result};
use crate::linalg::{log_abs_det, op_norm, Vector};
use crate::parallel::try_map_indexed;
use crate::pesin::regularity::second_derivative_sups;
use crate::rds::{orbit_with_jacobians, cocycle_product, DerivOrder, DiffeoFamily, MeasureRepr, OmegaPrefix};
use crate::rng::StreamKey;
use crate::stats::{hill_index, mean_se, se_decay_slope};

/// Smallest audit sample size.
pub const MIN_AUDIT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditOptions {
    pub samples: usize,
    /// Steps `n` of the ball statistic.
    pub steps: usize,
    pub ball_radius: f64,
    /// Low-discrepancy points in the ball besides its center.
    pub ball_points: usize,
    pub hill_fraction: f64,
    /// Hill indices at or below this are heavy-tail suspects.
    pub hill_threshold: f64,
    pub doublings: usize,
    /// SE decay slopes above this fail the `M^{-1/2}` check.
    pub max_decay_slope: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            samples: MIN_AUDIT_SAMPLES,
            steps: 1,
            ball_radius: 1.0,
            ball_points: 32,
            hill_fraction: 0.05,
            hill_threshold: 1.1,
            doublings: 3,
            max_decay_slope: -0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditVerdict {
    FiniteConsistent,
    HeavyTailSuspect,
    /// The audited sup vanishes on some samples, so its logarithm is `-inf`.
    DegenerateZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub name: String,
    pub statistic: String,
    /// Nats; absent when the verdict is `degenerate-zero`.
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub samples: usize,
    pub hill_index: Option<f64>,
    pub se_decay_slope: Option<f64>,
    /// Fraction of samples where the audited sup was exactly zero.
    pub zero_fraction: f64,
    pub lower_bound: bool,
    pub verdict: AuditVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub family: String,
    pub measure: String,
    pub samples: usize,
    pub steps: usize,
    pub ball_radius: f64,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    /// No entry is a heavy-tail suspect.
    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.verdict != AuditVerdict::HeavyTailSuspect)
    }

    pub fn entry(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Summarizes per-sample values of one audited quantity.
pub fn summarize(name: &str, statistic: &str, values: &[f64], lower_bound: bool, opts: &AuditOptions) -> AuditEntry {
    let zeros = values.iter().filter(|v| **v == f64::NEG_INFINITY).count();
    let zero_fraction = zeros as f64 / values.len().max(1) as f64;
    if zeros > 0 {
        return AuditEntry {
            name: name.into(),
            statistic: statistic.into(),
            estimate: None,
            se: None,
            samples: values.len(),
            hill_index: None,
            se_decay_slope: None,
            zero_fraction,
            lower_bound,
            verdict: AuditVerdict::DegenerateZero,
        };
    }
    let ms = mean_se(values);
    let hill = hill_index(values, opts.hill_fraction);
    // NaN: too few positive samples; +inf: no tail at all
    let hill = (!hill.is_nan()).then_some(hill);
    // values equal up to rounding carry no sampling error to decay
    let constant = ms.se <= 1e-12 * ms.mean.abs().max(1.0);
    let decay = if constant { None } else { se_decay_slope(values, opts.doublings) };
    let heavy = hill.is_some_and(|h| h <= opts.hill_threshold)
        || decay.is_some_and(|s| s > opts.max_decay_slope);
    AuditEntry {
        name: name.into(),
        statistic: statistic.into(),
        estimate: Some(ms.mean),
        se: Some(ms.se),
        samples: values.len(),
        hill_index: hill.filter(|h| h.is_finite()),
        se_decay_slope: decay,
        zero_fraction,
        lower_bound,
        verdict: if heavy {
            AuditVerdict::HeavyTailSuspect
        } else {
            AuditVerdict::FiniteConsistent
        },
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// `count` points of the open ball of radius `radius` from a Halton sequence
/// on the cube, keeping those strictly inside the ball.
pub fn halton_ball(d: usize, count: usize, radius: f64) -> Result<Vec<Vector>> {
    if d == 0 || d > PRIMES.len() {
        return Err(PesinError::Unsupported(format!(
            "Halton ball sampling supports 1 <= d <= {}",
            PRIMES.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut i = 1u64;
    while out.len() < count {
        let p = Vector::from_iterator(d, (0..d).map(|k| 2.0 * radical_inverse(i, PRIMES[k]) - 1.0));
        if p.norm() < 1.0 {
            out.push(p * radius);
        }
        i += 1;
    }
    Ok(out)
}

fn log_plus(v: f64) -> f64 {
    v.ln().max(0.0)
}

/// `(log(|x| + 1))^{1/2}` over `m` μ-samples.
pub fn audit_log_moment(mu: &MeasureRepr, m: usize, opts: &AuditOptions, key: StreamKey) -> AuditEntry {
    let values: Vec<f64> = mu
        .sample_many(key, m)
        .iter()
        .map(|x| (x.norm() + 1.0).ln().sqrt())
        .collect();
    summarize("mu-log-moment", "(log(|x|+1))^(1/2)", &values, false, opts)
}

struct SampleStats {
    a1: f64,
    a2_fwd: f64,
    a2_inv: f64,
    a3: f64,
    a4: f64,
    a5: f64,
}

/// Audits over `(ω, x) ~ ν × μ`.
pub fn audit_assumptions<F: DiffeoFamily + ?Sized>(
    family: &F,
    mu: &MeasureRepr,
    opts: &AuditOptions,
    key: StreamKey,
) -> Result<AuditReport> {
    let d = family.dim();
    if mu.dim() != d {
        return Err(PesinError::Dimension("measure and family dimensions differ".into()));
    }
    if opts.samples < MIN_AUDIT_SAMPLES {
        return Err(PesinError::InvalidInput(format!(
            "audit needs M >= {MIN_AUDIT_SAMPLES}, got {}",
            opts.samples
        )));
    }
    if !family.has_hessian() {
        return Err(PesinError::Capability(format!(
            "family `{}` provides no second derivative",
            family.name()
        )));
    }
    if opts.steps == 0 || !(opts.ball_radius > 0.0) {
        return Err(PesinError::InvalidInput("audit needs n >= 1 and a positive ball radius".into()));
    }
    let mut ball = vec![Vector::zeros(d)];
    ball.extend(halton_ball(d, opts.ball_points, opts.ball_radius)?);
    let state_key = key.child(0);
    let stats = try_map_indexed(opts.samples, |i| {
        let x = mu.sample(state_key, i as u64);
        let omega = OmegaPrefix::keyed(key.child(1 + i as u64), opts.steps).materialize(family);
        let theta = omega.record(family, 0);
        let ev = family.eval(&theta, &x, DerivOrder::First)?;
        let j = ev.jacobian.ok_or_else(|| PesinError::Capability("jacobian".into()))?;
        let jinv = j
            .clone()
            .try_inverse()
            .ok_or_else(|| PesinError::Degeneracy("singular derivative".into()))?;
        let (fwd, inv) = second_derivative_sups(family, &theta, &x, &ball)?;
        let mut a5: f64 = 0.0;
        for b in &ball {
            let orbit = orbit_with_jacobians(family, &omega, &(&x + b), opts.steps)?;
            a5 = a5.max(log_plus(op_norm(&cocycle_product(&orbit.jacobians, d))));
        }
        Ok(SampleStats {
            a1: log_plus(op_norm(&j)),
            a2_fwd: fwd.ln(),
            a2_inv: inv.ln(),
            a3: op_norm(&jinv).ln(),
            a4: log_abs_det(&j),
            a5,
        })
    })?;
    let col = |f: fn(&SampleStats) -> f64| stats.iter().map(f).collect::<Vec<f64>>();
    let entries = vec![
        summarize("A1", "log+ |D_x f_0|", &col(|s| s.a1), false, opts),
        summarize("A2-forward", "log sup_B |D^2 F|", &col(|s| s.a2_fwd), true, opts),
        summarize("A2-inverse", "log sup_B |D^2 F^-1|", &col(|s| s.a2_inv), true, opts),
        summarize("A3", "log |D_{f_0 x} f_0^-1|", &col(|s| s.a3), false, opts),
        summarize("A4", "log |det D_x f_0|", &col(|s| s.a4), false, opts),
        summarize("A5", "sup_B(x,r) log+ |D f^n|", &col(|s| s.a5), true, opts),
        audit_log_moment(mu, opts.samples, opts, key.child(u64::MAX)),
    ];
    Ok(AuditReport {
        family: family.name(),
        measure: mu.kind().into(),
        samples: opts.samples,
        steps: opts.steps,
        ball_radius: opts.ball_radius,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::rds::{AffineGaussian, GaussianMeasure, LinearFamily};
    use nalgebra::dmatrix;

    #[test]
    fn constant_linear_family_is_exact() {
        let a = dmatrix![2.0, 1.0; 0.0, 0.5];
        let fam = LinearFamily::constant(a.clone()).unwrap();
        let mu = MeasureRepr::analytic(GaussianMeasure::standard(2));
        let r = audit_assumptions(&fam, &mu, &AuditOptions::default(), StreamKey::new(1, 0)).unwrap();
        let a1 = r.entry("A1").unwrap();
        assert_eq!(a1.se, Some(0.0));
        assert!((a1.estimate.unwrap() - op_norm(&a).ln()).abs() < 1e-12);
        assert_eq!(a1.verdict, AuditVerdict::FiniteConsistent);
        let a4 = r.entry("A4").unwrap();
        assert!(a4.estimate.unwrap().abs() < 1e-12);
        assert_eq!(r.entry("A2-forward").unwrap().verdict, AuditVerdict::DegenerateZero);
    }

    #[test]
    fn additive_noise_second_derivative_is_degenerate_zero() {
        let fam = AffineGaussian::ou_exact(1, 1.0, 1.0, 1.0);
        let mu = MeasureRepr::analytic(GaussianMeasure::new(Vector::zeros(1), Matrix::identity(1, 1) * 0.5).unwrap());
        let r = audit_assumptions(&fam, &mu, &AuditOptions::default(), StreamKey::new(2, 0)).unwrap();
        for name in ["A2-forward", "A2-inverse"] {
            let e = r.entry(name).unwrap();
            assert_eq!(e.verdict, AuditVerdict::DegenerateZero);
            assert_eq!(e.estimate, None);
            assert_eq!(e.zero_fraction, 1.0);
        }
        assert!(r.passed());
        assert!((r.entry("A4").unwrap().estimate.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn heavy_tail_is_flagged() {
        // Pareto(1/2) samples have infinite mean
        let values: Vec<f64> = (1..=4096).map(|i| (i as f64 / 4097.0).powf(-2.0)).collect();
        let e = summarize("x", "x", &values, false, &AuditOptions::default());
        assert_eq!(e.verdict, AuditVerdict::HeavyTailSuspect);
    }

    #[test]
    fn halton_points_lie_in_the_open_ball() {
        let pts = halton_ball(3, 32, 1.0).unwrap();
        assert_eq!(pts.len(), 32);
        assert!(pts.iter().all(|p| p.norm() < 1.0));
        assert_eq!(pts, halton_ball(3, 32, 1.0).unwrap());
    }

    #[test]
    fn too_few_samples_rejected() {
        let fam = LinearFamily::constant(Matrix::identity(1, 1)).unwrap();
        let mu = MeasureRepr::analytic(GaussianMeasure::standard(1));
        let opts = AuditOptions {
            samples: 10,
            ..Default::default()
        };
        assert!(audit_assumptions(&fam, &mu, &opts, StreamKey::new(3, 0)).is_err());
    }
}
