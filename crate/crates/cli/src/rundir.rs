use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::report::write_figures;
use crate::results::Results;

pub const RESULTS_FILE: &str = "results.json";
pub const CONFIG_FILE: &str = "config.json";
pub const VERSION_FILE: &str = "version.json";

#[derive(Debug, Serialize)]
struct VersionStamp {
    package: &'static str,
    version: &'static str,
    command: String,
}

fn write(path: &Path, body: String) -> Result<()> {
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

/// Everything a command leaves behind: resolved config, version stamp,
/// results.json and its figures.
pub fn write_results<C: Serialize>(dir: &Path, command: &str, config: &C, results: &Results) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let figures = results.figures()?;
    write(
        &dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(config).expect("config serializes") + "\n",
    )?;
    let stamp = VersionStamp {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
    };
    write(&dir.join(VERSION_FILE), serde_json::to_string_pretty(&stamp).unwrap() + "\n")?;
    write(
        &dir.join(RESULTS_FILE),
        serde_json::to_string_pretty(results).expect("results serialize") + "\n",
    )?;
    write_figures(dir, &figures)?;
    Ok(())
}
