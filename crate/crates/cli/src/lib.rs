//! Batch experiment harness: TOML-configured, seeded, replicated runs of the
//! `polgrad` estimators and optimizers, written out as metric CSVs with a
//! manifest that pins every seed.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{ExperimentConfig, ExperimentKind};
pub use metrics::{angle_between, relative_error, split_bin_error_bars, MetricRow};
pub use run::{run_experiment, RunSummary};
