//! Deterministic experiment runner: INI configs checked against a schema, one pipeline per
//! experiment kind, and an output directory holding `manifest.json` plus CSV tables.

mod config;
mod manifest;
mod run;

pub use config::{ExperimentConfig, ExperimentKind, Value};
pub use manifest::{emit_plot_data, num, Check, Comparison, Manifest, RunStatus, SeriesInfo, Table, MANIFEST_FILE};
pub use run::{generator, run_experiment, RunOutput, GENERATOR};
