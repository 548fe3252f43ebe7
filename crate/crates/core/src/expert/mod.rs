//! Synthetic demonstrators standing in for human drivers.

mod corpus;
mod driver;
mod path;

pub use corpus::{generate_corpus, Corpus, CorpusManifest, ExpertConfig, RunStats, Split};
pub use driver::{default_presets, pursuit_command, DriverPreset, ExecutionConfig, ExpertDriver};
pub use path::{reference_path, Blend, PathConfig, ReferencePath};

use thiserror::Error;

use crate::controller::ControlError;
use crate::dataset::DatasetError;
use crate::profile::ProfileError;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("gap before cone set {set_index} is {gap:.2} m, a lane change needs {needed:.2} m")]
    GapTooShort { set_index: usize, gap: f64, needed: f64 },
    #[error("planned path passes {gap:.3} m from a cone at x = {x:.2} m (margin {margin} m)")]
    Clearance { x: f64, gap: f64, margin: f64 },
    #[error("invalid expert config: {0}")]
    Config(String),
    #[error("{rejected} of {attempts} expert runs rejected, above the {limit} allowed; expert is misconfigured")]
    TooManyRejections { rejected: usize, attempts: usize, limit: usize },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
