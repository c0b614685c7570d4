//! Experiment orchestration: configuration, pipelines and report emission.

pub mod config;
pub mod run;

pub use config::{
    build_family, build_measure, start_point, Budgets, DiscSpec, Discretization, ExperimentConfig, HolonomyConfig,
    MeasureSpec, OutputFormat, PartitionConfig, Pipeline, SpectrumBudget, SystemSpec,
};
pub use run::{run_experiment, Manifest, Versions};
