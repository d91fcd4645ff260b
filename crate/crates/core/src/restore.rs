//! End-to-end restoration: invert, detect, rectify, regenerate.

use std::fmt;

use crate::ddim::{generate, SamplerConfig};
use crate::degrade::{OperatorFamily, ParametricOperator};
use crate::error::{Error, Result};
use crate::inversion::{invert_blind, invert_partial, InversionReport, InvertOptions, OptimizerKind, ThetaInit};
use crate::normality::{scan_mask, tile_failure_rate, DefectMask, ScanConfig};
use crate::rectifier::{build_bank, rectify, RectifyReport, DEFAULT_BANK_SIZE, DEFAULT_TILE};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor3};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_DELTA_T: usize = 100;

/// Child-stream indices under the root seed.
pub mod stage {
    pub const INVERSION: u64 = 0;
    pub const BANK: u64 = 1;
    pub const DEGRADATION: u64 = 2;
    pub const SAMPLE: u64 = 3;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    FullyBlind,
    Partial { family: OperatorFamily, kernel_size: usize },
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::FullyBlind => write!(f, "fully_blind"),
            Mode::Partial { family, kernel_size } => write!(f, "partial({family}, {kernel_size})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestoreParams {
    pub alpha: f64,
    pub k: usize,
    /// Detection stride; the density bookkeeping always uses stride `k`.
    pub stride: usize,
    pub bank_size: usize,
    pub iters: usize,
    pub lr: f64,
    pub theta_lr: Option<f64>,
    pub optimizer: OptimizerKind,
    pub random_theta: bool,
    pub seed: u64,
    /// Noise shape when it differs from the observation (downsampling).
    pub latent_shape: Option<Shape>,
}

impl Default for RestoreParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            k: DEFAULT_TILE,
            stride: 1,
            bank_size: DEFAULT_BANK_SIZE,
            iters: crate::inversion::DEFAULT_ITERS,
            lr: crate::inversion::DEFAULT_LR,
            theta_lr: None,
            optimizer: OptimizerKind::Adam,
            random_theta: false,
            seed: 0,
            latent_shape: None,
        }
    }
}

impl RestoreParams {
    pub fn invert_options(&self) -> InvertOptions {
        InvertOptions {
            iters: self.iters,
            lr: self.lr,
            theta_lr: self.theta_lr,
            optimizer: self.optimizer,
            init: None,
            theta_init: if self.random_theta {
                ThetaInit::Random { scale: 1.0 }
            } else {
                ThetaInit::Zeros
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct RestoreOutput {
    pub x_hat: Tensor3,
    pub inversion: InversionReport,
    pub mask: DefectMask,
    pub rectify: RectifyReport,
    /// Non-overlapping tile failure rate of `z̃`.
    pub failure_rate_before: f64,
    /// Same statistic for `z*`.
    pub failure_rate_after: f64,
}

fn tagged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

/// Runs the full chain on `y`. Every random draw descends from `params.seed`.
pub fn restore(y: &Tensor3, cfg: &SamplerConfig, mode: Mode, params: &RestoreParams) -> Result<RestoreOutput> {
    let channels = params.latent_shape.map_or(y.channels(), |s| s.2);
    let scan = tagged("config", ScanConfig::new(params.k, params.stride, params.alpha, channels))?;
    let root = Rng::new(params.seed);
    let opts = params.invert_options();

    let inversion = match mode {
        Mode::FullyBlind => tagged(
            "inversion",
            invert_blind(y, cfg, &opts, &mut root.split(stage::INVERSION)),
        )?,
        Mode::Partial { family, kernel_size } => {
            let op = tagged("config", ParametricOperator::new(family, kernel_size))?;
            tagged(
                "inversion",
                invert_partial(y, cfg, &op, params.latent_shape, &opts, &mut root.split(stage::INVERSION)),
            )?
        }
    };
    let z_tilde = &inversion.z_tilde;

    let mask = tagged("detection", scan_mask(z_tilde, &scan))?;
    let bank = tagged(
        "bank",
        build_bank(&mut root.split(stage::BANK), params.bank_size, params.k),
    )?;
    let rect = tagged("substitution", rectify(z_tilde, &mask, &bank))?;
    let failure_rate_before = tagged("detection", tile_failure_rate(z_tilde, params.k, params.alpha))?;
    let failure_rate_after = tagged("detection", tile_failure_rate(&rect.z_star, params.k, params.alpha))?;
    let x_hat = tagged("generation", generate(cfg, &rect.z_star))?;
    Ok(RestoreOutput {
        x_hat,
        inversion,
        mask,
        rectify: rect,
        failure_rate_before,
        failure_rate_after,
    })
}
