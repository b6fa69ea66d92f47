//! Experiment harness: interference study, λ and epoch sweeps, plot data,
//! run manifests and the command-line front end.

pub mod cli;
pub mod interference;
pub mod manifest;
pub mod plots;
pub mod stats;
pub mod sweeps;

pub use interference::{run_interference, InterferenceRow, InterferenceRun, InterferenceSpec};
pub use manifest::{content_hash, RunManifest};
pub use plots::emit_plot_data;
pub use sweeps::{lambda_trend, run_epoch_sweep, run_lambda_sweep, EpochGrids, LAMBDA_GRID};
