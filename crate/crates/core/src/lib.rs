//! Entropy calculus, Lyapunov spectra, stable manifolds and entropy/exponent
//! checks for random dynamical systems on R^d.

// NaN must fail validity checks; index loops mirror the formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audit;
pub mod cache;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod linalg;
pub mod oseledets;
pub mod parallel;
pub mod partition;
pub mod pesin;
pub mod poly;
pub mod rds;
pub mod rng;
pub mod stats;

pub use error::{PesinError, Result};
