//! Configuration, experiment dispatch and report emission for the `interlace` binary.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use experiments::{Check, Outcome, RunError, RunOptions, run_experiment};
pub use report::{Format, Metric, RunRecord, emit_report};
