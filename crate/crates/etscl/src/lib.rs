//! File formats and the command-line front end for the `etscl-core` pipeline.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
mod error;
pub mod pnm;
pub mod report;

pub use error::{CliError, Result};

/// Resolved command configuration written into every output directory.
pub const CONFIG_FILE: &str = "config.json";
