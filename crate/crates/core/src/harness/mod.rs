//! Experiment orchestration behind the `ec3` command line.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod report;

pub use commands::{cmd_evaluate, cmd_sweep, cmd_synth_gen, cmd_train, cmd_verify_bounds, load_dataset};
pub use config::{BoundsConfig, ExperimentConfig, Overrides};
pub use ingest::{export, ingest};
pub use report::{BoundSummary, Provenance, RunReport, SplitRecord, TrainRun};

use crate::error::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_BOUND_VIOLATION: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Ingest { .. } | Error::Format(_) | Error::Domain(_) => EXIT_USAGE,
        Error::Divergence { .. } => EXIT_NUMERICAL,
        Error::Io(_) | Error::Json(_) => 1,
    }
}
