//! Experiment harness for `steer-core`: TOML configs, seeded runs and
//! budget sweeps with CSV/JSON output, gradient checks and the exact
//! verification suite.

pub mod build;
pub mod config;
mod error;
pub mod gradcheck;
pub mod output;
pub mod run;
pub mod toys;
pub mod verify;

pub use error::{HarnessError, Result};
