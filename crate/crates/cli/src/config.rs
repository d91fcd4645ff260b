//! Flat `key=value` run configuration.
//!
//! Values come from three layers, later ones winning: built-in defaults, an
//! optional config file, then command-line flags. Every key is checked against
//! the known set and parsed into [`RunConfig`], and errors name the key.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use i2r_core::inversion::OptimizerKind;
use i2r_core::{DegradationSpec, Error, OperatorFamily, Result, ScanConfig, Shape};

/// Every key a config file or manifest may set, in manifest order.
pub const KEYS: &[&str] = &[
    "command",
    "input",
    "reference",
    "out",
    "prior",
    "seed",
    "alpha",
    "k",
    "stride",
    "bank_size",
    "iters",
    "lr",
    "theta_lr",
    "optimizer",
    "random_theta",
    "delta_t",
    "steps",
    "beta_start",
    "beta_end",
    "degradation",
    "family",
    "kernel_size",
    "method",
    "shape",
    "components",
    "variance",
];

fn defaults() -> BTreeMap<&'static str, String> {
    [
        ("seed", "0"),
        ("alpha", "0.05"),
        ("k", "4"),
        ("stride", "1"),
        ("bank_size", "50000"),
        ("iters", "150"),
        ("lr", "0.001"),
        ("optimizer", "adam"),
        ("random_theta", "false"),
        ("delta_t", "100"),
        ("steps", "1000"),
        ("beta_start", "0.0001"),
        ("beta_end", "0.02"),
        ("family", "gaussian_blur"),
        ("kernel_size", "9"),
        ("method", "solver"),
        ("shape", "16x16x3"),
        ("components", "8"),
        ("variance", "0.002"),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.to_string()))
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Sample,
    Degrade,
    Invert,
    RestoreBlind,
    RestorePartial,
    TestNormality,
    Metrics,
    MakePrior,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Sample,
        Command::Degrade,
        Command::Invert,
        Command::RestoreBlind,
        Command::RestorePartial,
        Command::TestNormality,
        Command::Metrics,
        Command::MakePrior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Degrade => "degrade",
            Command::Invert => "invert",
            Command::RestoreBlind => "restore-blind",
            Command::RestorePartial => "restore-partial",
            Command::TestNormality => "test-normality",
            Command::Metrics => "metrics",
            Command::MakePrior => "make-prior",
        }
    }

    fn needs_prior(self) -> bool {
        matches!(
            self,
            Command::Sample | Command::Invert | Command::RestoreBlind | Command::RestorePartial
        )
    }

    fn needs_input(self) -> bool {
        !matches!(self, Command::Sample | Command::MakePrior)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| config_err("command", format!("unknown subcommand {s:?}")))
    }
}

/// How `invert` produces the noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvertMethod {
    /// Iterative solver with the configured optimizer.
    Solver,
    /// Deterministic backward ODE.
    Ode,
}

/// Fully parsed and range-checked settings for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub seed: u64,
    pub alpha: f64,
    pub k: usize,
    pub stride: usize,
    pub bank_size: usize,
    pub iters: usize,
    pub lr: f64,
    pub theta_lr: Option<f64>,
    pub optimizer: OptimizerKind,
    pub random_theta: bool,
    pub delta_t: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub degradation: Option<DegradationSpec>,
    pub family: OperatorFamily,
    pub kernel_size: usize,
    pub method: InvertMethod,
    pub shape: Shape,
    pub components: usize,
    pub variance: f64,
    /// Resolved key/value pairs, including defaults, as echoed in manifests.
    pub resolved: BTreeMap<String, String>,
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Parses a flat config text: one `key=value` per line, `#` starts a comment,
/// blank lines ignored. Later duplicates win.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err("line", format!("line {}: expected key=value, got {line:?}", no + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(config_err(key, format!("unknown key (line {})", no + 1)));
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_text(&text)
}

fn parse<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = map
        .get(key)
        .ok_or_else(|| config_err(key, "missing value"))?;
    raw.parse()
        .map_err(|e| config_err(key, format!("cannot parse {raw:?}: {e}")))
}

fn optional<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match map.get(key) {
        Some(v) if !v.is_empty() => parse(map, key).map(Some),
        _ => Ok(None),
    }
}

fn parse_shape(key: &str, s: &str) -> Result<Shape> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| config_err(key, format!("expected HxWxC, got {s:?}")))?;
    match dims[..] {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
        _ => Err(config_err(key, format!("expected three positive dims HxWxC, got {s:?}"))),
    }
}

fn ensure(ok: bool, key: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_err(key, reason))
    }
}

/// Merges defaults, file pairs and flag pairs (in that order) and validates.
pub fn build_config(
    command: Command,
    file_pairs: &[(String, String)],
    flag_pairs: &[(String, String)],
) -> Result<RunConfig> {
    let mut map: BTreeMap<String, String> = defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for (k, v) in file_pairs.iter().chain(flag_pairs) {
        if !KEYS.contains(&k.as_str()) {
            return Err(config_err(k, "unknown key"));
        }
        if k == "command" {
            if v != command.name() {
                return Err(config_err("command", format!("config is for {v:?}, running {command}")));
            }
            continue;
        }
        map.insert(k.clone(), v.clone());
    }
    map.insert("command".into(), command.name().into());

    let path = |key: &str| map.get(key).filter(|v| !v.is_empty()).map(PathBuf::from);
    let optimizer = match map["optimizer"].as_str() {
        "adam" => OptimizerKind::Adam,
        "gd" | "gradient_descent" => OptimizerKind::GradientDescent,
        other => return Err(config_err("optimizer", format!("expected adam or gd, got {other:?}"))),
    };
    let method = match map["method"].as_str() {
        "solver" => InvertMethod::Solver,
        "ode" => InvertMethod::Ode,
        other => return Err(config_err("method", format!("expected solver or ode, got {other:?}"))),
    };
    let cfg = RunConfig {
        command,
        input: path("input"),
        reference: path("reference"),
        out: path("out"),
        prior: path("prior"),
        seed: parse(&map, "seed")?,
        alpha: parse(&map, "alpha")?,
        k: parse(&map, "k")?,
        stride: parse(&map, "stride")?,
        bank_size: parse(&map, "bank_size")?,
        iters: parse(&map, "iters")?,
        lr: parse(&map, "lr")?,
        theta_lr: optional(&map, "theta_lr")?,
        optimizer,
        random_theta: parse(&map, "random_theta")?,
        delta_t: parse(&map, "delta_t")?,
        steps: parse(&map, "steps")?,
        beta_start: parse(&map, "beta_start")?,
        beta_end: parse(&map, "beta_end")?,
        degradation: optional(&map, "degradation")?,
        family: parse(&map, "family")?,
        kernel_size: parse(&map, "kernel_size")?,
        method,
        shape: parse_shape("shape", &map["shape"])?,
        components: parse(&map, "components")?,
        variance: parse(&map, "variance")?,
        resolved: map,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Range checks that do not depend on input data.
    fn validate(&self) -> Result<()> {
        ensure(self.alpha > 0.0 && self.alpha < 1.0, "alpha", "must lie in (0, 1)")?;
        ensure(self.k >= 1, "k", "must be at least 1")?;
        ensure(self.stride >= 1, "stride", "must be at least 1")?;
        ensure(self.bank_size >= 1, "bank_size", "must be at least 1")?;
        ensure(self.iters >= 1, "iters", "need at least one iteration")?;
        ensure(self.lr > 0.0 && self.lr.is_finite(), "lr", "must be positive")?;
        if let Some(t) = self.theta_lr {
            ensure(t > 0.0 && t.is_finite(), "theta_lr", "must be positive")?;
        }
        ensure(self.steps >= 2, "steps", "need at least 2 diffusion steps")?;
        ensure(
            self.delta_t >= 1 && self.delta_t <= self.steps,
            "delta_t",
            "must lie in 1..=steps",
        )?;
        ensure(
            self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0,
            "beta_start",
            "need 0 < beta_start <= beta_end < 1",
        )?;
        ensure(self.kernel_size % 2 == 1, "kernel_size", "must be odd")?;
        ensure(self.components >= 1, "components", "must be at least 1")?;
        ensure(self.variance > 0.0 && self.variance.is_finite(), "variance", "must be positive")?;
        if let Some(d) = &self.degradation {
            d.validate().map_err(|e| match e {
                Error::Config { key, reason } => config_err("degradation", format!("{key}: {reason}")),
                other => other,
            })?;
        }
        if self.command.needs_input() {
            ensure(self.input.is_some(), "input", "this subcommand needs an input file")?;
        }
        if self.command == Command::Metrics {
            ensure(self.reference.is_some(), "reference", "metrics needs two images")?;
        }
        if self.command.needs_prior() {
            ensure(self.prior.is_some(), "prior", "this subcommand needs a prior file")?;
        }
        if self.command == Command::Degrade {
            ensure(self.degradation.is_some(), "degradation", "degrade needs a degradation spec")?;
        }
        if self.command != Command::Metrics {
            ensure(self.out.is_some(), "out", "an output directory is required")?;
        }
        Ok(())
    }

    /// Window-size check against the channel count of the data being scanned.
    pub fn scan_config(&self, channels: usize) -> Result<ScanConfig> {
        ScanConfig::new(self.k, self.stride, self.alpha, channels)
    }

    /// `key=value` lines for every resolved key, in [`KEYS`] order.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            if let Some(v) = self.resolved.get(*key) {
                s.push_str(key);
                s.push('=');
                s.push_str(v);
                s.push('\n');
            }
        }
        s
    }
}
