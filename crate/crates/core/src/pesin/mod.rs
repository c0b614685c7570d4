//! Pesin-set machinery: parameters, the functions `l`, `r`, `C_δ`, Lyapunov
//! metrics, local stable-manifold charts, global membership and holonomy.

pub mod chart;
pub mod frames;
pub mod global;
pub mod holonomy;
pub mod metric;
pub mod params;
pub mod regularity;
mod shoot;

pub use chart::{fit_local_chart, fit_local_chart_at, push_forward_check, ChartExport, ChartOptions, ManifoldChart};
pub use frames::{estimate_l, l_from_frames, LEstimate, OrbitFrames};
pub use global::{global_membership, Membership};
pub use holonomy::{holonomy, HolonomyOptions, HolonomyResult, TransversalDisc};
pub use metric::{check_metric_bounds, lyapunov_norm, LyapNorm, LyapunovMetric, MetricBoundsReport};
pub use params::{
    chart_constants, comparison_constant, validate_params, ChartConstants, ChartScales, PesinParams, Violation,
};
pub use regularity::{estimate_c_delta, estimate_r, CDeltaEstimate, REstimate};
