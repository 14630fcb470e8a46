//! Experiment harness for rectiflow: TOML configs, end-to-end runs with
//! manifests, parameter sweeps and the acceptance checks.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod svg;
pub mod sweep;

pub use config::{parse_config, parse_config_str, DataSpec, ExperimentConfig, ModelChoice, SamplerSpec};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, stage_seeds, RunOptions, Stages};
pub use manifest::{config_digest, MetricsSummary, RunManifest, RunStatus, SamplerSummary};
pub use sweep::{run_sweep, SweepAxis, SweepOptions, SweepOutcome};
