//! Experiment orchestration behind the `slalom` binary: corpus collection,
//! training, offline scoring, closed-loop trials and SVG figures.

pub mod commands;
pub mod config;
pub mod plot;
pub mod report;

use thiserror::Error;

use slalom_core::controller::ControlError;
use slalom_core::expert::ExpertError;
use slalom_core::training::TrainError;

pub use commands::{campaign, expert_reference_run, trial_profiles, Experiment, RunOptions, RunOutcome};
pub use config::{ExperimentConfig, TrialConfig};
pub use plot::PlotError;
pub use report::MetricsReport;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    /// Missing, unreadable or incompatible input files.
    #[error("{0}")]
    Input(String),
    /// The run worked but the result is not acceptable (e.g. a collision).
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for usage, config and input problems; 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Input(_) => 2,
            _ => 1,
        }
    }
}
