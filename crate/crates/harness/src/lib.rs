//! Experiment harness for `ppcpt-core`: world and matrix files, the run
//! loop with its JSONL and CSV outputs, and log summaries.

pub mod checkpoint;
pub mod error;
pub mod matrix;
pub mod run;
pub mod summary;
pub mod world;

pub use error::{HarnessError, Result};
pub use matrix::{CellSpec, EvalSettings, ExperimentMatrix, PrivacyDefaults};
pub use run::{run_matrix, RunOptions, RunSummary};
pub use summary::{summarize, Summary, TrendFlag};
