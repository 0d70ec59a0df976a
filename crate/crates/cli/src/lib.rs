//! Batch front end: each subcommand reads a config, runs one analysis and
//! leaves a self-describing result directory behind.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod results;
pub mod rundir;

pub use cli::{run, Cli};
pub use error::{CliError, Result};
