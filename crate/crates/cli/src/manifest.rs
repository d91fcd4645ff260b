//! `manifest.txt`: the resolved configuration as `key=value` lines, preceded
//! by `#` comment lines carrying the version, seed and stage timings. Comments
//! are ignored on replay, so the manifest doubles as a config file.

use std::fs;
use std::path::Path;
use std::time::Duration;

use i2r_core::{Error, Result};

use crate::config::RunConfig;

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn render(cfg: &RunConfig, timings: &[(&str, Duration)]) -> String {
    let mut s = format!("# i2r {}\n# seed {}\n", env!("CARGO_PKG_VERSION"), cfg.seed);
    for (stage, d) in timings {
        s.push_str(&format!("# time {stage} {:.3} ms\n", d.as_secs_f64() * 1e3));
    }
    s.push_str(&cfg.echo());
    s
}

pub fn write(dir: &Path, cfg: &RunConfig, timings: &[(&str, Duration)]) -> Result<()> {
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, render(cfg, timings)).map_err(|source| Error::Io { path, source })
}

/// The subcommand recorded in a manifest or config text, if any.
pub fn recorded_command(pairs: &[(String, String)]) -> Option<&str> {
    pairs.iter().rev().find(|(k, _)| k == "command").map(|(_, v)| v.as_str())
}
