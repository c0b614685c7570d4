//! Entropy against the integrated positive Lyapunov exponents.

use serde::{Deserialize, Serialize};

use super::cells::{PartitionSpec, DEFAULT_BOX_SD};
use super::curve::{simulate_orbits, BiasCorrection, EntropyCurve};
use super::rate::{entropy_rate, DEFAULT_WINDOW};
use crate::audit::AuditReport;
use crate::error::{PesinError, Result};
use crate::oseledets::{lyapunov_spectrum_with, SpectrumOptions, DEFAULT_CLUSTER_GAP};
use crate::parallel::try_map_indexed;
use crate::rds::{DiffeoFamily, MeasureRepr, OmegaPrefix};
use crate::rng::StreamKey;
use crate::stats::{mean, mean_se};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyBudget {
    pub m_omega: usize,
    pub m_x: usize,
    /// Longest itinerary.
    pub n_max: usize,
    pub window: usize,
    pub g_start: usize,
    pub g_max: usize,
    /// Rate change across a doubling of `g` that counts as stable.
    pub ladder_tol: f64,
    pub bias: BiasCorrection,
    /// Box half-width in sample standard deviations.
    pub box_sd: f64,
    /// Absolute resolution added to the combined half-width, nats per step.
    pub abs_tol: f64,
}

impl Default for EntropyBudget {
    fn default() -> Self {
        Self {
            m_omega: 32,
            m_x: 10_000,
            n_max: 12,
            window: DEFAULT_WINDOW,
            g_start: 8,
            g_max: 64,
            ladder_tol: 0.02,
            bias: BiasCorrection::MillerMadow,
            box_sd: DEFAULT_BOX_SD,
            abs_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSampler {
    /// μ-samples whose spectra are averaged.
    pub samples: usize,
    /// Steps per spectrum.
    pub n: usize,
    pub block: usize,
    pub cluster_gap: f64,
}

impl Default for SpectrumSampler {
    fn default() -> Self {
        Self {
            samples: 64,
            n: 2000,
            block: 1,
            cluster_gap: DEFAULT_CLUSTER_GAP,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum AuditGate<'a> {
    Report(&'a AuditReport),
    Waived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    EqualityConsistent,
    InequalityConsistent,
    Violation,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub g: usize,
    pub rate: f64,
    pub se: f64,
    pub clamped: bool,
    pub stray_fraction: f64,
    /// `|rate - previous rate|`; absent on the first rung.
    pub change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PesinReport {
    pub h: f64,
    /// Three standard errors.
    pub h_halfwidth: f64,
    /// `∫ Σ λ_i⁺ m_i dμ`.
    pub lyapunov_sum: f64,
    /// Three standard errors.
    pub lyapunov_halfwidth: f64,
    /// `lyapunov_sum - h`.
    pub gap: f64,
    pub combined_halfwidth: f64,
    pub abs_tol: f64,
    pub verdict: Verdict,
    pub stabilized: bool,
    pub ladder: Vec<LadderRung>,
    pub curve: EntropyCurve,
    pub partition: PartitionSpec,
    pub spectrum_samples: usize,
    pub audit_waived: bool,
    pub diagnostics: Vec<String>,
}

/// Verdict from the two estimates. `violation` needs `h` above the exponent
/// sum by more than the combined half-width plus `abs_tol`.
pub fn classify(h: f64, sum: f64, combined: f64, abs_tol: f64, stabilized: bool) -> Verdict {
    let band = combined + abs_tol;
    if !stabilized {
        Verdict::Inconclusive
    } else if h > sum + band {
        Verdict::Violation
    } else if (h - sum).abs() <= band {
        Verdict::EqualityConsistent
    } else {
        Verdict::InequalityConsistent
    }
}

#[derive(Debug, Clone, Copy)]
struct SumEstimate {
    mean: f64,
    halfwidth: f64,
}

fn positive_exponent_sum<F: DiffeoFamily + ?Sized>(
    family: &F,
    mu: &MeasureRepr,
    sampler: &SpectrumSampler,
    key: StreamKey,
) -> Result<SumEstimate> {
    if sampler.samples == 0 {
        return Err(PesinError::InvalidInput("spectrum sampler needs samples >= 1".into()));
    }
    let opts = SpectrumOptions {
        block: sampler.block,
        cluster_gap: sampler.cluster_gap,
        frame: None,
    };
    let spectra = try_map_indexed(sampler.samples, |j| {
        let sk = key.child(j as u64);
        let x = mu.sample(sk, 0);
        let omega = OmegaPrefix::keyed(sk, sampler.n);
        lyapunov_spectrum_with(family, &omega, &x, sampler.n, &opts)
    })?;
    let sums: Vec<f64> = spectra.iter().map(|s| s.positive_sum()).collect();
    let halfwidth = if sums.len() > 1 {
        3.0 * mean_se(&sums).se
    } else {
        1.5 * spectra[0].positive_sum_halfwidth()
    };
    Ok(SumEstimate {
        mean: mean(&sums),
        halfwidth,
    })
}

/// Entropy by a refinement ladder of box partitions against the μ-average of
/// `Σ λ_i⁺ m_i`.
///
/// Orbits are simulated once and recoded at `g = g_start, 2 g_start, ...`
/// until the rate changes by less than `ladder_tol` or `g_max` is passed.
pub fn pesin_gap<F: DiffeoFamily + ?Sized>(
    family: &F,
    mu: &MeasureRepr,
    budget: &EntropyBudget,
    sampler: &SpectrumSampler,
    audit: AuditGate<'_>,
    key: StreamKey,
) -> Result<PesinReport> {
    let mut diagnostics = Vec::new();
    let audit_waived = match audit {
        AuditGate::Waived => {
            diagnostics.push("integrability audits waived".to_string());
            true
        }
        AuditGate::Report(r) if r.passed() => false,
        AuditGate::Report(r) => {
            let failed: Vec<&str> = r
                .entries
                .iter()
                .filter(|e| e.verdict == crate::audit::AuditVerdict::HeavyTailSuspect)
                .map(|e| e.name.as_str())
                .collect();
            return Err(PesinError::Certification(format!(
                "integrability audit flagged {}; waive it to proceed",
                failed.join(", ")
            )));
        }
    };
    if budget.g_start == 0 || budget.g_max < budget.g_start {
        return Err(PesinError::InvalidInput("ladder needs 1 <= g_start <= g_max".into()));
    }
    let bundle = simulate_orbits(family, mu, budget.n_max, budget.m_omega, budget.m_x, key.child(1))?;
    let base = PartitionSpec::fit(&bundle.initial_points(), budget.g_start, budget.box_sd)?;

    let mut ladder: Vec<LadderRung> = Vec::new();
    let mut stabilized = false;
    let mut last = None;
    let mut g = budget.g_start;
    while g <= budget.g_max {
        let xi = base.with_g(g)?;
        let curve = bundle.curve(&xi, budget.bias)?;
        let rate = entropy_rate(&curve, budget.window)?;
        if rate.clamped {
            diagnostics.push(format!("g = {g}: negative slope {:.4} clamped to 0", rate.raw_slope));
        }
        let change = ladder.last().map(|r| (rate.rate - r.rate).abs());
        ladder.push(LadderRung {
            g,
            rate: rate.rate,
            se: rate.se,
            clamped: rate.clamped,
            stray_fraction: curve.stray_fraction,
            change,
        });
        last = Some((xi, curve, rate));
        if change.is_some_and(|c| c < budget.ladder_tol) {
            stabilized = true;
            break;
        }
        g *= 2;
    }
    let (partition, curve, rate) = last.expect("g_start <= g_max gives one rung");
    if !stabilized {
        diagnostics.push(format!(
            "refinement ladder did not stabilize within {} nats up to g = {}",
            budget.ladder_tol, budget.g_max
        ));
    }

    let sum = positive_exponent_sum(family, mu, sampler, key.child(2))?;
    let h_halfwidth = 3.0 * rate.se;
    let combined = (h_halfwidth.powi(2) + sum.halfwidth.powi(2)).sqrt();
    let verdict = classify(rate.rate, sum.mean, combined, budget.abs_tol, stabilized);
    Ok(PesinReport {
        h: rate.rate,
        h_halfwidth,
        lyapunov_sum: sum.mean,
        lyapunov_halfwidth: sum.halfwidth,
        gap: sum.mean - rate.rate,
        combined_halfwidth: combined,
        abs_tol: budget.abs_tol,
        verdict,
        stabilized,
        ladder,
        curve,
        partition,
        spectrum_samples: sampler.samples,
        audit_waived,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rds::{AffineGaussian, GaussianMeasure};

    #[test]
    fn verdict_rules() {
        assert_eq!(classify(0.01, 0.0, 0.0, 0.05, true), Verdict::EqualityConsistent);
        assert_eq!(classify(0.2, 0.0, 0.1, 0.05, true), Verdict::Violation);
        assert_eq!(classify(0.1, 1.0, 0.1, 0.05, true), Verdict::InequalityConsistent);
        assert_eq!(classify(5.0, 0.0, 0.0, 0.0, false), Verdict::Inconclusive);
    }

    #[test]
    fn contracting_affine_map_has_zero_gap() {
        let fam = AffineGaussian::new(
            crate::linalg::Matrix::identity(2, 2) * 0.5,
            crate::linalg::Matrix::identity(2, 2),
        )
        .unwrap();
        let cov = fam.stationary_covariance().unwrap();
        let mu = MeasureRepr::analytic(GaussianMeasure::new(crate::linalg::Vector::zeros(2), cov).unwrap());
        let budget = EntropyBudget {
            m_omega: 8,
            m_x: 2000,
            n_max: 10,
            g_max: 32,
            ..Default::default()
        };
        let sampler = SpectrumSampler {
            samples: 8,
            n: 200,
            ..Default::default()
        };
        let r = pesin_gap(&fam, &mu, &budget, &sampler, AuditGate::Waived, StreamKey::new(5, 0)).unwrap();
        assert_eq!(r.lyapunov_sum, 0.0);
        assert!(r.h <= 0.05, "{r:?}");
        assert_eq!(r.verdict, Verdict::EqualityConsistent, "{:?}", r.ladder);
    }
}
