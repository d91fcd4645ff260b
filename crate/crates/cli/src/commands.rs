//! Subcommand bodies. Each one computes its artifacts in memory; [`run`]
//! writes them and the manifest only after everything succeeded.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use i2r_core::ddim::generate;
use i2r_core::inversion::{invert_blind, InvertOptions};
use i2r_core::io::{encode_image, encode_tensor, read_any};
use i2r_core::metrics::{mse, psnr, ssim, UNIT_RANGE_PEAK};
use i2r_core::normality::{scan_mask, tile_failure_rate, DefectMask};
use i2r_core::prior::{load_gmm, load_mlp, save_gmm};
use i2r_core::restore::stage;
use i2r_core::{
    draw_standard_normal, invert_ode, kernel_from_theta, restore, Error, GmmPrior, Mode, NoiseSchedule, RestoreParams,
    Result, Rng, SamplerConfig, ScoreModel, Shape, Tensor3,
};

use crate::config::{Command, InvertMethod, RunConfig};
use crate::manifest;

/// One output file, held in memory until the run succeeds.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub timings: Vec<(&'static str, Duration)>,
    /// Human-readable summary printed to stdout.
    pub summary: String,
}

impl Outcome {
    fn tensor(&mut self, name: &str, t: &Tensor3) -> Result<()> {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            bytes: encode_tensor(t)?,
        });
        Ok(())
    }

    /// Writes `stem.pgm` or `stem.ppm` when the channel count allows an image.
    fn image(&mut self, stem: &str, t: &Tensor3) -> Result<()> {
        let ext = match t.channels() {
            1 => "pgm",
            3 => "ppm",
            _ => return Ok(()),
        };
        self.artifacts.push(Artifact {
            name: format!("{stem}.{ext}"),
            bytes: encode_image(t)?,
        });
        Ok(())
    }

    fn text(&mut self, name: &str, body: String) {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            bytes: body.into_bytes(),
        });
    }

    fn timed<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings.push((stage, start.elapsed()));
        out
    }
}

fn tagged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage,
            source: Box::new(e),
        },
    })
}

/// Runs the subcommand and, on success, writes artifacts plus the manifest.
pub fn run(mut cfg: RunConfig) -> Result<Outcome> {
    absolutize(&mut cfg)?;
    let outcome = match cfg.command {
        Command::Sample => sample(&cfg),
        Command::Degrade => degrade(&cfg),
        Command::Invert => invert(&cfg),
        Command::RestoreBlind | Command::RestorePartial => restore_cmd(&cfg),
        Command::TestNormality => test_normality(&cfg),
        Command::Metrics => metrics(&cfg),
        Command::MakePrior => make_prior(&cfg),
    }?;
    if let Some(dir) = &cfg.out {
        let start = Instant::now();
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        for a in &outcome.artifacts {
            let path = dir.join(&a.name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| Error::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            fs::write(&path, &a.bytes).map_err(|source| Error::Io { path, source })?;
        }
        let mut timings = outcome.timings.clone();
        timings.push(("write", start.elapsed()));
        manifest::write(dir, &cfg, &timings)?;
    }
    Ok(outcome)
}

/// Input paths are recorded absolute so a manifest replays from any directory.
fn absolutize(cfg: &mut RunConfig) -> Result<()> {
    for key in ["input", "reference", "prior"] {
        let Some(raw) = cfg.resolved.get(key).filter(|v| !v.is_empty()).cloned() else {
            continue;
        };
        let abs = fs::canonicalize(&raw).map_err(|source| Error::Io {
            path: PathBuf::from(&raw),
            source,
        })?;
        match key {
            "input" => cfg.input = Some(abs.clone()),
            "reference" => cfg.reference = Some(abs.clone()),
            _ => cfg.prior = Some(abs.clone()),
        }
        cfg.resolved.insert(key.into(), abs.display().to_string());
    }
    Ok(())
}

fn schedule(cfg: &RunConfig) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(cfg.steps, cfg.beta_start, cfg.beta_end)
}

/// The score model named by `prior`, with its native shape when it has one.
fn load_model(cfg: &RunConfig) -> Result<(Arc<dyn ScoreModel>, Option<Shape>)> {
    let path = cfg.prior.as_deref().expect("validated");
    if path.extension().is_some_and(|e| e == "i2rm") {
        Ok((Arc::new(load_mlp(path)?), None))
    } else {
        let gmm = load_gmm(path)?;
        let shape = gmm.shape();
        Ok((Arc::new(gmm), Some(shape)))
    }
}

fn sampler(cfg: &RunConfig, expect: Option<Shape>) -> Result<SamplerConfig> {
    let (model, native) = load_model(cfg)?;
    if let (Some(native), Some(shape)) = (native, expect) {
        if native != shape {
            return Err(Error::Shape {
                expected: native,
                actual: shape,
            });
        }
    }
    SamplerConfig::new(schedule(cfg)?, model, cfg.delta_t)
}

fn read_input(path: &Option<PathBuf>) -> Result<Tensor3> {
    read_any(path.as_deref().expect("validated"))
}

fn sample(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let (model, native) = load_model(cfg)?;
    let shape = native.unwrap_or(cfg.shape);
    let sampler = SamplerConfig::new(schedule(cfg)?, model, cfg.delta_t)?;
    let z = draw_standard_normal(&mut Rng::new(cfg.seed).split(stage::SAMPLE), shape);
    let x = out.timed("generate", || tagged("generation", generate(&sampler, &z)))?;
    out.tensor("noise.i2rt", &z)?;
    out.tensor("sample.i2rt", &x)?;
    out.image("sample", &x)?;
    out.summary = format!("sampled {}x{}x{}\n", shape.0, shape.1, shape.2);
    Ok(out)
}

fn degrade(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let x = read_input(&cfg.input)?;
    let spec = cfg.degradation.as_ref().expect("validated");
    let mut rng = Rng::new(cfg.seed).split(stage::DEGRADATION);
    let y = out.timed("degrade", || tagged("degradation", spec.apply(&x, &mut rng)))?;
    out.tensor("degraded.i2rt", &y)?;
    out.image("degraded", &y)?;
    out.text("degradation.txt", format!("{spec}\n"));
    out.summary = format!("applied {spec}\n");
    Ok(out)
}

fn invert(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let y = read_input(&cfg.input)?;
    let sampler = tagged("config", sampler(cfg, Some(y.shape())))?;
    let mut report = String::from("key,value\n");
    let z = match cfg.method {
        InvertMethod::Solver => {
            let opts = InvertOptions {
                iters: cfg.iters,
                lr: cfg.lr,
                theta_lr: cfg.theta_lr,
                optimizer: cfg.optimizer,
                ..Default::default()
            };
            let mut rng = Rng::new(cfg.seed).split(stage::INVERSION);
            let rep = out.timed("inversion", || tagged("inversion", invert_blind(&y, &sampler, &opts, &mut rng)))?;
            writeln!(report, "initial_loss,{:e}", rep.initial_loss()).unwrap();
            writeln!(report, "final_loss,{:e}", rep.final_loss()).unwrap();
            writeln!(report, "iterations,{}", rep.iterations).unwrap();
            writeln!(report, "diverged,{}", rep.diverged).unwrap();
            out.text("losses.csv", rep.loss_csv());
            rep.z_tilde
        }
        InvertMethod::Ode => {
            let z = out.timed("inversion", || tagged("inversion", invert_ode(&sampler, &y)))?;
            let back = tagged("generation", generate(&sampler, &z))?;
            let err = back.zip_map(&y, |a, b| a - b)?.max_abs();
            writeln!(report, "round_trip_max_error,{err:e}").unwrap();
            z
        }
    };
    if let Ok(rate) = tile_failure_rate(&z, cfg.k, cfg.alpha) {
        writeln!(report, "tile_failure_rate,{rate:e}").unwrap();
    }
    out.tensor("z_tilde.i2rt", &z)?;
    out.summary = report.clone();
    out.text("report.csv", report);
    Ok(out)
}

fn mask_artifacts(out: &mut Outcome, mask: &DefectMask) -> Result<()> {
    out.tensor("mask.i2rt", &mask.mask)?;
    out.image("mask", &mask.mask.map(|v| 2.0 * v - 1.0))?;
    out.tensor("min_pvalue.i2rt", &mask.min_pvalue)
}

fn restore_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let y = read_input(&cfg.input)?;
    let reference = cfg.reference.as_deref().map(read_any).transpose()?;
    let mode = if cfg.command == Command::RestorePartial {
        Mode::Partial {
            family: cfg.family,
            kernel_size: cfg.kernel_size,
        }
    } else {
        Mode::FullyBlind
    };
    let latent = match mode {
        Mode::Partial {
            family: i2r_core::OperatorFamily::Downsample { factor },
            ..
        } => (y.height() * factor, y.width() * factor, y.channels()),
        _ => y.shape(),
    };
    let sampler = tagged("config", sampler(cfg, Some(latent)))?;
    tagged("config", cfg.scan_config(latent.2))?;
    let params = RestoreParams {
        alpha: cfg.alpha,
        k: cfg.k,
        stride: cfg.stride,
        bank_size: cfg.bank_size,
        iters: cfg.iters,
        lr: cfg.lr,
        theta_lr: cfg.theta_lr,
        optimizer: cfg.optimizer,
        random_theta: cfg.random_theta,
        seed: cfg.seed,
        latent_shape: Some(latent),
    };
    let res = out.timed("restore", || restore(&y, &sampler, mode, &params))?;

    let mut report = String::from("key,value\n");
    let mut row = |k: &str, v: String| writeln!(report, "{k},{v}").unwrap();
    row("mode", mode.to_string().replace(", ", ";"));
    row("initial_loss", format!("{:e}", res.inversion.initial_loss()));
    row("final_loss", format!("{:e}", res.inversion.final_loss()));
    row("iterations", res.inversion.iterations.to_string());
    row("diverged", res.inversion.diverged.to_string());
    row("windows_tested", res.mask.windows_tested.to_string());
    row("windows_failed", res.mask.windows_failed.to_string());
    row(
        "masked_fraction",
        format!("{:e}", res.mask.masked_count() as f64 / res.mask.mask.len() as f64),
    );
    row("tiles_replaced", res.rectify.tiles_replaced.to_string());
    row("mean_nn_distance", format!("{:e}", res.rectify.mean_nn_distance));
    row("failure_rate_before", format!("{:e}", res.failure_rate_before));
    row("failure_rate_after", format!("{:e}", res.failure_rate_after));
    if let Some(x) = &reference {
        if x.shape() == res.x_hat.shape() {
            row("psnr_restored", format!("{:e}", psnr(&res.x_hat, x, UNIT_RANGE_PEAK)?));
            row("ssim_restored", format!("{:e}", ssim(&res.x_hat, x, UNIT_RANGE_PEAK)?));
        }
        if x.shape() == y.shape() {
            row("psnr_input", format!("{:e}", psnr(&y, x, UNIT_RANGE_PEAK)?));
            row("ssim_input", format!("{:e}", ssim(&y, x, UNIT_RANGE_PEAK)?));
        }
    }

    out.tensor("z_tilde.i2rt", &res.inversion.z_tilde)?;
    mask_artifacts(&mut out, &res.mask)?;
    out.tensor("z_sample.i2rt", &res.rectify.z_sample)?;
    out.tensor("z_star.i2rt", &res.rectify.z_star)?;
    out.tensor("x_hat.i2rt", &res.x_hat)?;
    out.image("x_hat", &res.x_hat)?;
    out.text("losses.csv", res.inversion.loss_csv());
    if let Some(theta) = &res.inversion.theta_star {
        out.tensor("kernel.i2rt", &kernel_from_theta(theta)?)?;
    }
    out.summary = report.clone();
    out.text("report.csv", report);
    Ok(out)
}

fn test_normality(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let z = read_input(&cfg.input)?;
    let scan = tagged("config", cfg.scan_config(z.channels()))?;
    let mask = out.timed("detection", || tagged("detection", scan_mask(&z, &scan)))?;
    let rate = tagged("detection", tile_failure_rate(&z, cfg.k, cfg.alpha))?;
    let mut report = String::from("key,value\n");
    writeln!(report, "windows_tested,{}", mask.windows_tested).unwrap();
    writeln!(report, "windows_failed,{}", mask.windows_failed).unwrap();
    writeln!(report, "window_failure_rate,{:e}", mask.failure_rate()).unwrap();
    writeln!(report, "tile_failure_rate,{rate:e}").unwrap();
    writeln!(report, "masked_fraction,{:e}", mask.masked_count() as f64 / z.len() as f64).unwrap();
    mask_artifacts(&mut out, &mask)?;
    out.summary = report.clone();
    out.text("report.csv", report);
    Ok(out)
}

/// Formats a metric, spelling the identical-image PSNR sentinel as `inf`.
fn metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn metrics(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let a = read_input(&cfg.input)?;
    let b = read_input(&cfg.reference)?;
    let text = format!(
        "psnr={}\nssim={}\nmse={}\n",
        metric(psnr(&a, &b, UNIT_RANGE_PEAK)?),
        metric(ssim(&a, &b, UNIT_RANGE_PEAK)?),
        metric(mse(&a, &b)?),
    );
    out.summary = text.clone();
    out.text("metrics.txt", text);
    Ok(out)
}

fn make_prior(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let prior = GmmPrior::synthetic(&mut Rng::new(cfg.seed), cfg.shape, cfg.components, cfg.variance)?;
    // save_gmm writes to a directory; stage it in memory through a scratch dir
    let scratch = std::env::temp_dir().join(format!("i2r-prior-{}-{}", std::process::id(), cfg.seed));
    let staged = save_gmm(&prior, &scratch).and_then(|_| collect_dir(&scratch));
    let _ = fs::remove_dir_all(&scratch);
    for (name, bytes) in staged? {
        out.artifacts.push(Artifact { name, bytes });
    }
    out.summary = format!("{} components, variance {}\n", cfg.components, cfg.variance);
    Ok(out)
}

fn collect_dir(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let io_err = |source| Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let bytes = fs::read(entry.path()).map_err(io_err)?;
        files.push((entry.file_name().to_string_lossy().into_owned(), bytes));
    }
    files.sort();
    Ok(files)
}
