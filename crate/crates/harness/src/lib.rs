//! Experiment harness for `mase-core`: synthetic corpora, a trainable
//! linear probe, configured benchmark runs with checkpointing, report
//! files, and a JSON-lines bridge to out-of-process models.

pub mod bridge;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod heatmap;
pub mod probe;
pub mod report;

pub use config::{ExperimentConfig, ExplainerConfig, ExplainerKind, Overrides};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentResults, RunOptions};
