//! Experiment harness: configuration, single trials, the range and platform
//! speed sweeps, summary statistics and CSV/chart output.

pub mod config;
pub mod output;
pub mod stats;
pub mod sweep;
pub mod trial;

use thiserror::Error;

use crate::galvo::GalvoError;
use crate::world::WorldError;

pub use config::{parse_config, print_config, print_default_config, ConfigError, SimConfig};
pub use output::{emit_chart, emit_csv, write_csv, SweepAxis, CSV_HEADER};
pub use stats::{pooled_standard_error, spearman, summarize, summarize_values, PointSummary, Stats};
pub use sweep::{sweep_distance, sweep_speed};
pub use trial::{run_trial, run_trial_logged, score_events, TrialResult, TrialScore};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario has no pests; efficiency is undefined")]
    EmptyScenario,
    #[error("no results")]
    EmptyResults,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Galvo(#[from] GalvoError),
    #[error("malformed event log: {0}")]
    BadLog(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// Configuration problems are the caller's to fix; everything else is a runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}
