//! Command-line experiment runner: dataset generation, training,
//! evaluation and the strategy ablation, with CSV and PGM outputs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod strategy;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
