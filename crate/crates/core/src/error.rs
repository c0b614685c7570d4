use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum PesinError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("exact enumeration needs {words} noise words, cap is {cap}; use the Monte Carlo estimator instead")]
    EnumerationCap { words: u128, cap: u64 },

    #[error("trajectory diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("degenerate linear algebra: {0}")]
    Degeneracy(String),

    #[error("capability unavailable: {0}")]
    Capability(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no spectral gap at threshold {threshold}: rate {nearest} lies within {gap}")]
    NoSpectralGap { threshold: f64, nearest: f64, gap: f64 },

    #[error("Lyapunov series diverges: estimated rate {rate} >= {limit}")]
    SeriesDivergence { rate: f64, limit: f64 },

    #[error("only {accepted} of the required {required} samples were accepted")]
    SparseAcceptance { accepted: usize, required: usize },

    #[error("certification failure: {0}")]
    Certification(String),

    #[error("holonomy geometry error: {0}")]
    Geometry(String),

    #[error("partition covers too little mass: {stray_fraction:.3} of samples fell in the unbounded cell")]
    Coverage { stray_fraction: f64 },

    #[error("inverse consistency check failed (max error {max_error:.3e}); increase substeps")]
    InverseConsistency { max_error: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PesinError {
    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PesinError::Config(_)
            | PesinError::InvalidInput(_)
            | PesinError::Dimension(_)
            | PesinError::EnumerationCap { .. }
            | PesinError::Json(_) => 2,
            PesinError::Divergence { .. }
            | PesinError::SeriesDivergence { .. }
            | PesinError::InverseConsistency { .. }
            | PesinError::Degeneracy(_) => 3,
            PesinError::Capability(_) | PesinError::Unsupported(_) => 4,
            // certification, coverage, geometry and I/O failures
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PesinError>;
