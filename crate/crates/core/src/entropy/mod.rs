//! Monte Carlo entropy of random systems on R^d by itinerary coding over box
//! partitions, entropy-rate extrapolation, the entropy/exponent comparison and
//! the time-scaling check.

pub mod cells;
pub mod curve;
pub mod embedded;
pub mod gap;
pub mod rate;
pub mod scaling;

pub use cells::PartitionSpec;
pub use curve::{
    curve_from_codes, entropy_curve, itinerary_entropy, simulate_orbits, BiasCorrection, CurvePoint, EntropyCurve,
    OrbitBundle,
};
pub use embedded::{EmbeddedFiniteRds, LatticeMeasure};
pub use gap::{classify, pesin_gap, AuditGate, EntropyBudget, LadderRung, PesinReport, SpectrumSampler, Verdict};
pub use rate::{entropy_rate, RateEstimate};
pub use scaling::{scaling_check, scaling_check_capped, ScalingResult};
