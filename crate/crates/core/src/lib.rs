//! Conformal prediction sets with entropy-aware correction.
//!
//! Start with [`conformal::run_cp`] for calibrated sets, [`adapter::train`] to
//! learn a correction of the base probabilities, and [`tempering::temp_sweep`]
//! for the temperature baseline. [`harness`] wires these into the `ec3` binary.

pub mod adapter;
pub mod bounds;
pub mod conformal;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod prob;
pub mod scores;
pub mod synth;
pub mod tempering;

pub use error::{Error, Result};
