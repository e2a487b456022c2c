//! Batch pipeline behind the `oscloc` binary: simulate labelled forced
//! oscillation datasets, learn a metric, then classify and evaluate.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, Result};
