//! Library side of the `i2r` binary: configuration layering, subcommand
//! execution and run manifests.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::Path;

use i2r_core::{Error, Result};

pub use commands::{run, Outcome};
pub use config::{build_config, Command, RunConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit code for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config { .. } | Error::Shape { .. } | Error::Capability(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        _ => EXIT_NUMERIC,
    }
}

/// Builds the configuration from an optional config file plus flag pairs and
/// runs it.
pub fn run_command(command: Command, config_file: Option<&Path>, flags: &[(String, String)]) -> Result<Outcome> {
    let file_pairs = match config_file {
        Some(p) => config::read_config_file(p)?,
        None => Vec::new(),
    };
    run(build_config(command, &file_pairs, flags)?)
}

/// Re-executes the run recorded in a manifest, optionally into another
/// output directory.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<Outcome> {
    let pairs = config::read_config_file(manifest_path)?;
    let command: Command = manifest::recorded_command(&pairs)
        .ok_or_else(|| Error::Config {
            key: "command".into(),
            reason: format!("{} records no subcommand", manifest_path.display()),
        })?
        .parse()?;
    let mut flags = Vec::new();
    if let Some(out) = out {
        flags.push(("out".to_string(), out.display().to_string()));
    }
    run(build_config(command, &pairs, &flags)?)
}
