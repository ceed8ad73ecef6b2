//! Batch front end: run configuration, parameter files, problem assembly
//! and the `validate`, `simulate`, `gradcheck`, `identify`, `export`
//! commands.

pub mod commands;
pub mod config;
pub mod setup;
pub mod theta_file;

pub use commands::Outcome;
pub use config::RunConfig;

use std::path::Path;

/// Reads a config file and assembles its problem; relative paths in the
/// config are taken from the config's directory.
pub fn load_setup(path: &Path) -> anyhow::Result<setup::Setup> {
    let config = RunConfig::load(path)?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    setup::build(config, base)
}
