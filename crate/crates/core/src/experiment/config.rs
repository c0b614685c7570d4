//! Experiment configuration: one JSON document, unknown keys rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::AuditOptions;
use crate::entropy::{EntropyBudget, SpectrumSampler};
use crate::error::{PesinError, Result};
use crate::flow::{builtin_model, discretize, IntegratorOrder, PolySdeModel};
use crate::linalg::{Matrix, Vector};
use crate::oseledets::DEFAULT_CLUSTER_GAP;
use crate::pesin::{ChartOptions, HolonomyOptions, PesinParams};
use crate::poly::Polynomial;
use crate::rds::{
    AffineGaussian, CloudSpec, DiffeoFamily, EmpiricalCloud, GaussianMeasure, LinearFamily, MeasureRepr,
    PolynomialMap, UniformBox,
};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Simulate,
    Spectrum,
    Entropy,
    PesinVerify,
    Audit,
    StableManifold,
    Holonomy,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Simulate => "simulate",
            Pipeline::Spectrum => "spectrum",
            Pipeline::Entropy => "entropy",
            Pipeline::PesinVerify => "pesin-verify",
            Pipeline::Audit => "audit",
            Pipeline::StableManifold => "stable-manifold",
            Pipeline::Holonomy => "holonomy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Built-in flows (`ou`, `gradient_double_well`, `duffing_vdp`) and maps
/// (`diag`), polynomial SDE tables, or explicit map families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Builtin {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
    PolynomialSde {
        drift: Vec<Polynomial>,
        /// `d × m` table of diffusion coefficients.
        diffusion: Vec<Vec<Polynomial>>,
    },
    Linear {
        /// Row-major matrices.
        matrices: Vec<Vec<Vec<f64>>>,
        probs: Vec<f64>,
    },
    Affine {
        a: Vec<Vec<f64>>,
        noise: Vec<Vec<f64>>,
    },
    PolynomialMap {
        components: Vec<Polynomial>,
        #[serde(default)]
        noise_std: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    /// Time between consecutive maps.
    pub horizon: f64,
    pub substeps: usize,
    /// 1 or 2.
    pub order: u8,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            substeps: 64,
            order: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Analytic stationary law when one is known, an empirical cloud otherwise.
    #[default]
    Auto,
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Cloud {
        #[serde(default)]
        spec: CloudSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub g: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            center: None,
            radius: None,
            g: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumBudget {
    pub n: usize,
    pub block: usize,
    pub cluster_gap: f64,
}

impl Default for SpectrumBudget {
    fn default() -> Self {
        Self {
            n: 10_000,
            block: 1,
            cluster_gap: DEFAULT_CLUSTER_GAP,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    /// Steps of the `simulate` pipeline.
    pub simulate_steps: usize,
    pub spectrum: SpectrumBudget,
    pub entropy: EntropyBudget,
    pub spectrum_sampler: SpectrumSampler,
    pub audit: AuditOptions,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            simulate_steps: 1000,
            spectrum: SpectrumBudget::default(),
            entropy: EntropyBudget::default(),
            spectrum_sampler: SpectrumSampler::default(),
            audit: AuditOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscSpec {
    /// E-coordinates of the disc at `η = 0`.
    pub offset: Vec<f64>,
    /// `k × (d − k)` slope, row-major.
    pub slope: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolonomyConfig {
    pub options: HolonomyOptions,
    pub disc1: Option<DiscSpec>,
    pub disc2: Option<DiscSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub pipeline: Option<Pipeline>,
    pub system: SystemSpec,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub measure: MeasureSpec,
    /// Starting point for single-orbit pipelines; when absent, the origin for
    /// linear systems and `0.5` per axis otherwise.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads, 0 for the library default.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub pesin: Option<PesinParams>,
    #[serde(default)]
    pub chart: ChartOptions,
    /// Levels at which stable-manifold charts are fitted.
    #[serde(default = "default_levels")]
    pub chart_levels: Vec<usize>,
    #[serde(default)]
    pub holonomy: HolonomyConfig,
    #[serde(default)]
    pub waive_audit: bool,
}

fn default_levels() -> Vec<usize> {
    vec![0]
}

fn config_err(e: impl std::fmt::Display) -> PesinError {
    PesinError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PesinError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the configuration, ignoring where and how outputs are
    /// written and how many workers run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.threads = 0;
        c.format = OutputFormat::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn key(&self) -> StreamKey {
        StreamKey::new(self.seed, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.discretization.substeps == 0 || !(self.discretization.horizon > 0.0) {
            return Err(config_err("discretization needs substeps >= 1 and horizon > 0"));
        }
        if !matches!(self.discretization.order, 1 | 2) {
            return Err(config_err("integrator order must be 1 or 2"));
        }
        if self.partition.g == 0 {
            return Err(config_err("partition g must be >= 1"));
        }
        if self.chart_levels.is_empty() {
            return Err(config_err("chart_levels must not be empty"));
        }
        Ok(())
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(config_err(format!("{what} must be a nonempty rectangular table")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn is_flow(name: &str) -> bool {
    matches!(name, "ou" | "gradient_double_well" | "duffing_vdp")
}

/// The random-map family described by the configuration.
pub fn build_family(cfg: &ExperimentConfig) -> Result<Arc<dyn DiffeoFamily>> {
    cfg.validate()?;
    let disc = &cfg.discretization;
    let order = if disc.order == 2 {
        IntegratorOrder::Two
    } else {
        IntegratorOrder::One
    };
    Ok(match &cfg.system {
        SystemSpec::Builtin { name, params } if is_flow(name) => {
            let model = builtin_model(name, params)?;
            Arc::new(discretize(model, disc.horizon, disc.substeps, order)?)
        }
        SystemSpec::Builtin { name, params } if name == "diag" => {
            for k in params.keys() {
                if !k.strip_prefix('d').is_some_and(|i| i.parse::<usize>().is_ok()) {
                    return Err(config_err(format!("unknown diag parameter `{k}`")));
                }
            }
            let mut entries = vec![2.0, 0.5];
            for (k, v) in params {
                let i: usize = k[1..].parse().expect("checked above");
                if i >= entries.len() {
                    entries.resize(i + 1, 1.0);
                }
                entries[i] = *v;
            }
            Arc::new(LinearFamily::constant(Matrix::from_diagonal(&Vector::from_vec(entries)))?)
        }
        SystemSpec::Builtin { name, .. } => {
            return Err(config_err(format!("unknown built-in system `{name}`")));
        }
        SystemSpec::PolynomialSde { drift, diffusion } => {
            let model = PolySdeModel::from_tables(drift.clone(), diffusion.clone()).map_err(config_err)?;
            Arc::new(discretize(Arc::new(model), disc.horizon, disc.substeps, order)?)
        }
        SystemSpec::Linear { matrices, probs } => {
            let mats = matrices
                .iter()
                .map(|m| matrix(m, "linear matrix"))
                .collect::<Result<Vec<_>>>()?;
            Arc::new(LinearFamily::new(mats, probs.clone()).map_err(config_err)?)
        }
        SystemSpec::Affine { a, noise } => {
            Arc::new(AffineGaussian::new(matrix(a, "a")?, matrix(noise, "noise")?).map_err(config_err)?)
        }
        SystemSpec::PolynomialMap { components, noise_std } => {
            Arc::new(PolynomialMap::with_noise(components.clone(), *noise_std).map_err(config_err)?)
        }
    })
}

/// Linear cocycles: the derivative ignores the state and only the origin has a bounded orbit.
fn linear_system(s: &SystemSpec) -> bool {
    matches!(s, SystemSpec::Linear { .. }) || matches!(s, SystemSpec::Builtin { name, .. } if name == "diag")
}

pub fn start_point(cfg: &ExperimentConfig, d: usize) -> Result<Vector> {
    match &cfg.x0 {
        Some(v) if v.len() == d => Ok(Vector::from_vec(v.clone())),
        Some(v) => Err(config_err(format!("x0 has {} entries, system has d = {d}", v.len()))),
        None if linear_system(&cfg.system) => Ok(Vector::zeros(d)),
        None => Ok(Vector::from_element(d, 0.5)),
    }
}

/// The measure described by the configuration.
pub fn build_measure(cfg: &ExperimentConfig, family: &dyn DiffeoFamily) -> Result<MeasureRepr> {
    let d = family.dim();
    let check = |v: &[f64], what: &str| {
        if v.len() == d {
            Ok(())
        } else {
            Err(config_err(format!("{what} has {} entries, system has d = {d}", v.len())))
        }
    };
    match &cfg.measure {
        MeasureSpec::Gaussian { mean, cov } => {
            check(mean, "measure mean")?;
            let m = GaussianMeasure::new(Vector::from_vec(mean.clone()), matrix(cov, "measure cov")?)
                .map_err(config_err)?;
            Ok(MeasureRepr::analytic(m))
        }
        MeasureSpec::Uniform { lo, hi } => {
            check(lo, "measure lo")?;
            check(hi, "measure hi")?;
            let m = UniformBox::new(Vector::from_vec(lo.clone()), Vector::from_vec(hi.clone())).map_err(config_err)?;
            Ok(MeasureRepr::analytic(m))
        }
        MeasureSpec::Cloud { spec } => cloud(cfg, family, *spec),
        MeasureSpec::Auto => {
            if let Some(m) = analytic_stationary(cfg)? {
                return Ok(m);
            }
            cloud(cfg, family, CloudSpec::default())
        }
    }
}

fn cloud(cfg: &ExperimentConfig, family: &dyn DiffeoFamily, spec: CloudSpec) -> Result<MeasureRepr> {
    let x0 = start_point(cfg, family.dim())?;
    Ok(MeasureRepr::empirical(EmpiricalCloud::simulate(
        family,
        &x0,
        spec,
        cfg.key().child(0xC10D),
    )?))
}

/// Stationary laws known in closed form: the OU flow and affine Gaussian maps.
fn analytic_stationary(cfg: &ExperimentConfig) -> Result<Option<MeasureRepr>> {
    match &cfg.system {
        SystemSpec::Builtin { name, params } if name == "ou" => {
            let rate = params.get("rate").copied().unwrap_or(1.0);
            let sigma = params.get("sigma").copied().unwrap_or(1.0);
            let d = params.get("dim").copied().unwrap_or(1.0) as usize;
            if !(rate > 0.0) || sigma == 0.0 {
                return Ok(None);
            }
            let var = sigma * sigma / (2.0 * rate);
            let m = GaussianMeasure::new(Vector::zeros(d), Matrix::identity(d, d) * var)?;
            Ok(Some(MeasureRepr::analytic(m)))
        }
        SystemSpec::Affine { a, noise } => {
            let fam = AffineGaussian::new(matrix(a, "a")?, matrix(noise, "noise")?).map_err(config_err)?;
            let Ok(cov) = fam.stationary_covariance() else {
                return Ok(None);
            };
            let d = cov.nrows();
            Ok(GaussianMeasure::new(Vector::zeros(d), cov)
                .ok()
                .map(MeasureRepr::analytic))
        }
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_json(r#"{"system": {"type": "builtin", "name": "ou"}}"#).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.format, OutputFormat::Csv);
        assert_eq!(c.budgets.entropy.m_omega, 32);
        assert_eq!(build_family(&c).unwrap().dim(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"system": {"type": "builtin", "name": "ou"}, "sede": 1}"#,
            r#"{"system": {"type": "builtin", "name": "ou", "prams": {}}}"#,
            r#"{"system": {"type": "builtin", "name": "ou"}, "budgets": {"entropy": {"mx": 3}}}"#,
            r#"{"system": {"type": "builtin", "name": "ou"}, "pesin": {"a": -1, "b": -0.5, "k": 1, "eps": 0.001, "l_cap": 1, "r_cap": 1, "c_cap": 1, "z": 0}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(PesinError::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_ignores_output_plumbing() {
        let mut c = ExperimentConfig::from_json(r#"{"system": {"type": "builtin", "name": "diag"}}"#).unwrap();
        let h = c.hash();
        c.threads = 8;
        c.out_dir = Some("elsewhere".into());
        c.format = OutputFormat::Json;
        assert_eq!(c.hash(), h);
        c.seed = 1;
        assert_ne!(c.hash(), h);
    }

    #[test]
    fn diag_builtin_and_unknown_names() {
        let c = ExperimentConfig::from_json(r#"{"system": {"type": "builtin", "name": "diag", "params": {"d1": 0.25}}}"#)
            .unwrap();
        let f = build_family(&c).unwrap();
        let j = f.jacobian(&[0.0], &Vector::zeros(2)).unwrap();
        assert_eq!(j[(0, 0)], 2.0);
        assert_eq!(j[(1, 1)], 0.25);
        let c = ExperimentConfig::from_json(r#"{"system": {"type": "builtin", "name": "lorenz"}}"#).unwrap();
        assert!(matches!(build_family(&c), Err(PesinError::Config(_))));
    }
}
