//! Command-line harness for joint inference and input optimization:
//! configuration, dataset ingestion, checkpoints, CSV export and the
//! benchmark runners behind the `jiio` binary.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod idx;
pub mod output;

pub use error::{CliError, Result};
