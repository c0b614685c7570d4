//! Pipeline execution and artifact writing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{build_family, build_measure, start_point, ExperimentConfig, OutputFormat, Pipeline};
use crate::audit::{audit_assumptions, AuditReport};
use crate::cache::{write_trajectory, Trajectory};
use crate::entropy::{entropy_curve, entropy_rate, pesin_gap, AuditGate, EntropyCurve, PartitionSpec};
use crate::error::{PesinError, Result};
use crate::linalg::{Matrix, Vector};
use crate::oseledets::{det_identity_residual, lyapunov_spectrum_with, SpectrumOptions};
use crate::parallel::with_threads;
use crate::pesin::{fit_local_chart_at, holonomy, TransversalDisc};
use crate::rds::{compose, DiffeoFamily, MeasureRepr, OmegaPrefix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub pesin_core: String,
    pub manifest_format: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub pipeline: String,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub versions: Versions,
    pub wall_time_s: f64,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub summary: Value,
}

struct Writer {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.outputs.push(rel.to_string());
        Ok(p)
    }

    fn text(&mut self, rel: &str, body: &str) -> Result<()> {
        let p = self.path(rel)?;
        std::fs::write(p, body)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(rel, &body)
    }

    fn trajectory(&mut self, rel: &str, t: &Trajectory) -> Result<()> {
        let p = self.path(rel)?;
        write_trajectory(&p, t)
    }

    fn curve(&mut self, stem: &str, curve: &EntropyCurve, format: OutputFormat) -> Result<()> {
        match format {
            OutputFormat::Csv => self.text(&format!("{stem}.csv"), &curve.to_csv()),
            OutputFormat::Json => {
                let rows: Vec<Value> = curve
                    .points
                    .iter()
                    .map(|p| json!({"n": p.n, "H": p.h, "SE": p.se, "Momega": curve.m_omega, "Mx": curve.m_x, "g": curve.g}))
                    .collect();
                self.json(&format!("{stem}.json"), &rows)
            }
        }
    }

    fn curve_chart(&mut self, curve: &EntropyCurve) -> Result<()> {
        self.json(
            "charts/entropy_curve.json",
            &json!({
                "x": curve.points.iter().map(|p| p.n).collect::<Vec<_>>(),
                "y": curve.points.iter().map(|p| p.h).collect::<Vec<_>>(),
                "se": curve.points.iter().map(|p| p.se).collect::<Vec<_>>(),
                "x_label": "n",
                "y_label": "H_n (nats)",
                "g": curve.g,
            }),
        )
    }
}

/// Runs the configured pipeline and writes its artifacts plus `manifest.json`.
///
/// Module errors are recorded in the manifest; the returned manifest carries
/// the process exit status. Only failures to write the manifest itself are
/// returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    let start = Instant::now();
    let dir = cfg.out_dir();
    let mut writer = Writer::new(&dir)?;
    let pipeline = cfg.pipeline;
    let outcome = match pipeline {
        Some(p) => with_threads(cfg.threads, || execute(cfg, p, &mut writer)),
        None => Err(PesinError::Config("no pipeline selected".into())),
    };
    let (status, exit_code, error, summary) = match outcome {
        Ok(summary) => ("ok", 0, None, summary),
        Err(e) => ("error", e.exit_code(), Some(e.to_string()), Value::Null),
    };
    let manifest = Manifest {
        pipeline: pipeline.map_or("none", Pipeline::name).to_string(),
        status: status.into(),
        exit_code,
        error,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        threads: cfg.threads,
        versions: Versions {
            pesin_core: env!("CARGO_PKG_VERSION").into(),
            manifest_format: 1,
        },
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: writer.outputs.clone(),
        summary,
    };
    writer.outputs.clear();
    writer.json("manifest.json", &manifest)?;
    Ok(manifest)
}

fn execute(cfg: &ExperimentConfig, pipeline: Pipeline, w: &mut Writer) -> Result<Value> {
    let family = build_family(cfg)?;
    let fam: &dyn DiffeoFamily = family.as_ref();
    let d = fam.dim();
    let key = cfg.key();
    let b = &cfg.budgets;
    match pipeline {
        Pipeline::Simulate => {
            let x0 = start_point(cfg, d)?;
            let omega = OmegaPrefix::keyed(key.child(10), b.simulate_steps);
            let traj = compose(fam, &omega, &x0, b.simulate_steps)?;
            w.trajectory("trajectory.pesn", &Trajectory::from_points(d, &traj)?)?;
            let last = traj.last().expect("x0").iter().copied().collect::<Vec<_>>();
            Ok(json!({"steps": b.simulate_steps, "dim": d, "final_state": last}))
        }
        Pipeline::Spectrum => {
            let x0 = start_point(cfg, d)?;
            let n = b.spectrum.n;
            let omega = OmegaPrefix::keyed(key.child(11), n).materialize(fam);
            let opts = SpectrumOptions {
                block: b.spectrum.block,
                cluster_gap: b.spectrum.cluster_gap,
                frame: None,
            };
            let spec = lyapunov_spectrum_with(fam, &omega, &x0, n, &opts)?;
            let residual = det_identity_residual(fam, &omega, &x0, n, &spec)?;
            w.json("lambda.json", &spec)?;
            w.json(
                "charts/spectrum.json",
                &json!({"index": (0..spec.rho.len()).collect::<Vec<_>>(), "rho": spec.rho, "halfwidth": spec.halfwidth}),
            )?;
            Ok(json!({"det_identity_residual": residual, "positive_sum": spec.positive_sum()}))
        }
        Pipeline::Entropy => {
            let mu = build_measure(cfg, fam)?;
            let e = &b.entropy;
            let xi = partition(cfg, &mu, key)?;
            let curve = entropy_curve(fam, &mu, &xi, e.n_max, e.m_omega, e.m_x, e.bias, key.child(12))?;
            let rate = entropy_rate(&curve, e.window)?;
            w.curve("entropy", &curve, cfg.format)?;
            w.curve_chart(&curve)?;
            w.json("entropy_rate.json", &rate)?;
            Ok(json!({"rate": rate.rate, "se": rate.se, "clamped": rate.clamped, "partition": xi, "stray_fraction": curve.stray_fraction}))
        }
        Pipeline::Audit => {
            let mu = build_measure(cfg, fam)?;
            let report = audit(cfg, fam, &mu)?;
            w.json("audit.json", &report)?;
            Ok(json!({"passed": report.passed()}))
        }
        Pipeline::PesinVerify => {
            let mu = build_measure(cfg, fam)?;
            let report = if cfg.waive_audit {
                None
            } else {
                let r = audit(cfg, fam, &mu)?;
                w.json("audit.json", &r)?;
                Some(r)
            };
            let gate = report.as_ref().map_or(AuditGate::Waived, AuditGate::Report);
            let rep = pesin_gap(fam, &mu, &b.entropy, &b.spectrum_sampler, gate, key.child(13))?;
            w.json("pesin_report.json", &rep)?;
            w.curve("entropy", &rep.curve, cfg.format)?;
            w.curve_chart(&rep.curve)?;
            w.json(
                "charts/ladder.json",
                &json!({
                    "g": rep.ladder.iter().map(|r| r.g).collect::<Vec<_>>(),
                    "rate": rep.ladder.iter().map(|r| r.rate).collect::<Vec<_>>(),
                    "se": rep.ladder.iter().map(|r| r.se).collect::<Vec<_>>(),
                }),
            )?;
            Ok(json!({"verdict": rep.verdict, "h": rep.h, "lyapunov_sum": rep.lyapunov_sum, "gap": rep.gap}))
        }
        Pipeline::StableManifold => {
            let p = cfg
                .pesin
                .ok_or_else(|| PesinError::Config("stable-manifold needs `pesin` parameters".into()))?;
            let x0 = start_point(cfg, d)?;
            let horizon = cfg.chart.l_test.max(cfg.chart.shoot_horizon);
            let top = *cfg.chart_levels.iter().max().expect("validated nonempty");
            let omega = OmegaPrefix::keyed(key.child(14), top + horizon + 1).materialize(fam);
            let mut summary = Vec::new();
            for &level in &cfg.chart_levels {
                let chart = fit_local_chart_at(fam, &omega, &x0, level, &p, &cfg.chart)?;
                w.json(&format!("charts/chart_{level}.json"), &chart.export())?;
                summary.push(json!({"level": level, "residual": chart.residual, "tangency": chart.tangency, "accepted": chart.accepted}));
            }
            Ok(json!({"charts": summary}))
        }
        Pipeline::Holonomy => {
            let p = cfg
                .pesin
                .ok_or_else(|| PesinError::Config("holonomy needs `pesin` parameters".into()))?;
            let x0 = start_point(cfg, d)?;
            let h = &cfg.holonomy;
            let omega = OmegaPrefix::keyed(key.child(15), h.options.horizon + 1).materialize(fam);
            let dh = d.checked_sub(p.k).filter(|v| *v > 0).ok_or_else(|| {
                PesinError::Config("holonomy needs 1 <= k < d".into())
            })?;
            let disc = |spec: &Option<super::config::DiscSpec>, shift: f64| -> Result<TransversalDisc> {
                match spec {
                    Some(s) => {
                        if s.offset.len() != p.k || s.slope.len() != p.k || s.slope.iter().any(|r| r.len() != dh) {
                            return Err(PesinError::Config("disc offset must have k entries and slope k × (d−k)".into()));
                        }
                        let slope = Matrix::from_fn(p.k, dh, |i, j| s.slope[i][j]);
                        TransversalDisc::affine(&Vector::from_vec(s.offset.clone()), &slope, h.options.q)
                    }
                    None => TransversalDisc::affine(
                        &Vector::from_element(p.k, shift),
                        &Matrix::zeros(p.k, dh),
                        h.options.q,
                    ),
                }
            };
            let w1 = disc(&h.disc1, 0.0)?;
            let w2 = disc(&h.disc2, 0.2 * h.options.q)?;
            let res = holonomy(fam, &omega, &x0, &w1, &w2, &p, &h.options)?;
            w.json("holonomy.json", &res)?;
            w.json("charts/holonomy_jacobians.json", &json!({"jacobian": res.jacobians}))?;
            Ok(json!({"fraction_in_bound": res.fraction_in_bound, "fraction_near_one": res.fraction_near_one, "dropped": res.dropped}))
        }
    }
}

fn audit(cfg: &ExperimentConfig, fam: &dyn DiffeoFamily, mu: &MeasureRepr) -> Result<AuditReport> {
    audit_assumptions(fam, mu, &cfg.budgets.audit, cfg.key().child(16))
}

/// The configured box, completed from μ-samples where fields are absent.
fn partition(cfg: &ExperimentConfig, mu: &MeasureRepr, key: crate::rng::StreamKey) -> Result<PartitionSpec> {
    let pc = &cfg.partition;
    let fitted = PartitionSpec::fit(&mu.sample_many(key.child(17), 4096), pc.g, cfg.budgets.entropy.box_sd)?;
    let center = match &pc.center {
        Some(c) if c.len() == fitted.dim() => c.clone(),
        Some(_) => return Err(PesinError::Config("partition center has the wrong dimension".into())),
        None => fitted.center.clone(),
    };
    PartitionSpec::new(center, pc.radius.unwrap_or(fitted.radius), pc.g).map_err(|e| PesinError::Config(e.to_string()))
}
