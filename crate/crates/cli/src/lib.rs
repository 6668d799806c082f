//! Experiment driver: toy training runs, static cost tables, precision
//! sweeps, and SVG reports, all configured from TOML.

pub mod commands;
pub mod config;
mod error;
pub mod output;
mod svg;

pub use commands::{
    cmd_estimate, cmd_report, cmd_sweep, cmd_train, default_rows, Summary, TrainOutcome,
};
pub use config::{LadderSpec, Method, RunConfig};
pub use error::{CliError, Result};
pub use output::Row;
