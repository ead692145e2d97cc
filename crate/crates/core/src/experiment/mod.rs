//! Declarative experiments: a JSON configuration drives simulation,
//! estimation and the written artifacts.
//!
//! A run is a pure function of the configuration. The worker count changes
//! wall-clock time only; every artifact except the manifest (which records
//! wall-clock time) is byte-identical across worker counts.

mod config;
mod manifest;
pub mod presets;
mod run;

pub use config::{
    EnsembleConfig, EstimatorRequest, ExperimentConfig, GridConfig, ModelConfig, OutputConfig,
    OutputFormat, StationaryRequest, SCHEMA,
};
pub use manifest::{sha256_hex, ArtifactEntry, RunManifest};
pub use run::{
    inequality_suite, run, EstimatorSummary, Overrides, RunOutcome, RunSummary, Subcommand,
    Verdict, SUMMARY_SCHEMA,
};
