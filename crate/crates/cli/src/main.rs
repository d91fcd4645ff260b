use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use i2r_cli::{exit_code, replay, run_command, Command};

#[derive(Parser)]
#[command(name = "i2r", version, about = "Blind image restoration by rectifying diffusion noise")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Draw noise and generate an image from the prior.
    Sample(Common),
    /// Apply a synthetic degradation to an image.
    Degrade(WithInput),
    /// Recover the noise that generates an image.
    Invert(WithInput),
    /// Restore with no knowledge of the degradation.
    RestoreBlind(WithInput),
    /// Restore while also fitting a parametric operator.
    RestorePartial(WithInput),
    /// Scan a noise map for non-Gaussian windows.
    TestNormality(WithInput),
    /// PSNR and SSIM between two images.
    Metrics(MetricsArgs),
    /// Write a synthetic Gaussian-mixture prior.
    MakePrior(Common),
    /// Re-run the configuration recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct WithInput {
    /// Input image (.pgm/.ppm) or tensor (.i2rt).
    input: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MetricsArgs {
    input: Option<PathBuf>,
    /// Image to compare against.
    #[arg(value_name = "REFERENCE")]
    other: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Every flag is taken as a raw string so that parse errors are reported by
/// key, the same way as for config files.
#[derive(Args)]
struct Common {
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    stride: Option<String>,
    #[arg(long)]
    bank_size: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    theta_lr: Option<String>,
    /// adam or gd
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    random_theta: Option<String>,
    #[arg(long)]
    delta_t: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    beta_start: Option<String>,
    #[arg(long)]
    beta_end: Option<String>,
    /// e.g. quantize:levels=8, gaussian_blur:sigma=2,size=9, streaks
    #[arg(long)]
    degradation: Option<String>,
    /// Operator family for restore-partial.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    kernel_size: Option<String>,
    /// solver or ode (invert only)
    #[arg(long)]
    method: Option<String>,
    /// HxWxC
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    components: Option<String>,
    #[arg(long)]
    variance: Option<String>,
}

impl Common {
    fn pairs(&self) -> Vec<(String, String)> {
        let fields = [
            ("out", &self.out),
            ("prior", &self.prior),
            ("reference", &self.reference),
            ("seed", &self.seed),
            ("alpha", &self.alpha),
            ("k", &self.k),
            ("stride", &self.stride),
            ("bank_size", &self.bank_size),
            ("iters", &self.iters),
            ("lr", &self.lr),
            ("theta_lr", &self.theta_lr),
            ("optimizer", &self.optimizer),
            ("random_theta", &self.random_theta),
            ("delta_t", &self.delta_t),
            ("steps", &self.steps),
            ("beta_start", &self.beta_start),
            ("beta_end", &self.beta_end),
            ("degradation", &self.degradation),
            ("family", &self.family),
            ("kernel_size", &self.kernel_size),
            ("method", &self.method),
            ("shape", &self.shape),
            ("components", &self.components),
            ("variance", &self.variance),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

fn with_paths(common: &Common, paths: &[(&str, &Option<PathBuf>)]) -> Vec<(String, String)> {
    let mut pairs = common.pairs();
    for (key, p) in paths {
        if let Some(p) = p {
            pairs.push((key.to_string(), p.display().to_string()));
        }
    }
    pairs
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Sub::Replay(a) => replay(&a.manifest, a.out.as_deref()),
        Sub::Sample(c) => run_command(Command::Sample, c.config.as_deref(), &c.pairs()),
        Sub::MakePrior(c) => run_command(Command::MakePrior, c.config.as_deref(), &c.pairs()),
        Sub::Metrics(m) => run_command(
            Command::Metrics,
            m.common.config.as_deref(),
            &with_paths(&m.common, &[("input", &m.input), ("reference", &m.other)]),
        ),
        Sub::Degrade(w) | Sub::Invert(w) | Sub::RestoreBlind(w) | Sub::RestorePartial(w) | Sub::TestNormality(w) => {
            let command = match &cli.command {
                Sub::Degrade(_) => Command::Degrade,
                Sub::Invert(_) => Command::Invert,
                Sub::RestoreBlind(_) => Command::RestoreBlind,
                Sub::RestorePartial(_) => Command::RestorePartial,
                _ => Command::TestNormality,
            };
            run_command(command, w.common.config.as_deref(), &with_paths(&w.common, &[("input", &w.input)]))
        }
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
