//! Gradient-descent inversion of the DDIM generator.
//!
//! [`invert_blind`] minimizes `‖G(z) − y‖²` over the input noise `z`.
//! [`invert_partial`] adds a blur kernel `softmax(θ)` and minimizes
//! `‖H_θ(G(z)) − y‖²` jointly over `(z, θ)`. Both run a fixed number of
//! optimizer steps from `z⁰ ~ N(0, I)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::ddim::{adjoint_from_trace, generate, generate_trace, SamplerConfig};
use crate::degrade::ParametricOperator;
use crate::error::{Error, Result};
use crate::rng::{draw_standard_normal, Rng};
use crate::tensor::{Shape, Tensor3};

pub const DEFAULT_ITERS: usize = 150;
pub const DEFAULT_LR: f64 = 0.001;

/// Adam with bias correction, one moment pair per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Plain `z ← z − η ∇L`.
    GradientDescent,
}

enum Optimizer {
    Adam(Adam),
    Gd(f64),
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr, len)),
            OptimizerKind::GradientDescent => Optimizer::Gd(lr),
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Adam(a) => a.step(params, grad),
            Optimizer::Gd(lr) => params.iter_mut().zip(grad).for_each(|(p, g)| *p -= *lr * g),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ThetaInit {
    /// All-zero logits: the uniform kernel.
    Zeros,
    /// `N(0, scale²)` logits from the solver's generator.
    Random { scale: f64 },
    Given(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct InvertOptions {
    pub iters: usize,
    pub lr: f64,
    /// Learning rate for the kernel logits; `None` uses `lr`.
    pub theta_lr: Option<f64>,
    pub optimizer: OptimizerKind,
    /// Starting noise; `None` draws `z⁰ ~ N(0, I)`.
    pub init: Option<Tensor3>,
    pub theta_init: ThetaInit,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            iters: DEFAULT_ITERS,
            lr: DEFAULT_LR,
            theta_lr: None,
            optimizer: OptimizerKind::Adam,
            init: None,
            theta_init: ThetaInit::Zeros,
        }
    }
}

impl InvertOptions {
    fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::config("iters", "need at least one iteration"));
        }
        let lr_ok = |lr: f64| lr > 0.0 && lr.is_finite();
        if !lr_ok(self.lr) || !self.theta_lr.is_none_or(lr_ok) {
            return Err(Error::config("lr", "learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionReport {
    pub z_tilde: Tensor3,
    pub theta_star: Option<Vec<f64>>,
    /// `losses[i]` is the objective at iterate `i`; the last entry is the
    /// objective at the returned point.
    pub losses: Vec<f64>,
    pub iterations: usize,
    /// Set when a non-finite objective or gradient stopped the run early; the
    /// returned iterate is the last finite one.
    pub diverged: bool,
}

impl InversionReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(s, "{i},{l:e}").unwrap();
        }
        s
    }

    pub fn write_loss_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.loss_csv()).map_err(|e| Error::io(path, e))
    }
}

fn sq_residual(pred: &Tensor3, y: &Tensor3) -> Result<(Tensor3, f64)> {
    let r = pred.zip_map(y, |a, b| a - b)?;
    let loss = r.norm_sq();
    Ok((r, loss))
}

/// `‖G(z) − y‖²` and its gradient `2 (∂G/∂z)ᵀ (G(z) − y)`.
pub fn blind_objective(cfg: &SamplerConfig, y: &Tensor3, z: &Tensor3) -> Result<(f64, Tensor3)> {
    let states = generate_trace(cfg, z)?;
    let (r, loss) = sq_residual(states.last().unwrap(), y)?;
    let grad = adjoint_from_trace(cfg, &states, &r.scale(2.0))?;
    Ok((loss, grad))
}

pub fn blind_loss(cfg: &SamplerConfig, y: &Tensor3, z: &Tensor3) -> Result<f64> {
    Ok(sq_residual(&generate(cfg, z)?, y)?.1)
}

/// Fully blind inversion of `y` through the generator.
pub fn invert_blind(y: &Tensor3, cfg: &SamplerConfig, opts: &InvertOptions, rng: &mut Rng) -> Result<InversionReport> {
    opts.validate()?;
    let mut z = match &opts.init {
        Some(z0) => {
            y.same_shape(z0)?;
            z0.clone()
        }
        None => draw_standard_normal(rng, y.shape()),
    };
    let mut opt = Optimizer::new(opts.optimizer, opts.lr, z.len());
    let mut losses = Vec::with_capacity(opts.iters + 1);
    let mut diverged = false;
    let mut done = 0;
    for _ in 0..opts.iters {
        let (loss, grad) = match blind_objective(cfg, y, &z) {
            Ok(v) if v.0.is_finite() && v.1.is_finite() => v,
            Ok(_) | Err(Error::Numeric { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        losses.push(loss);
        let prev = z.clone();
        opt.step(z.as_mut_slice(), grad.as_slice());
        if !z.is_finite() {
            z = prev;
            diverged = true;
            break;
        }
        done += 1;
    }
    if diverged {
        losses.truncate(done);
    }
    losses.push(blind_loss(cfg, y, &z)?);
    Ok(InversionReport {
        z_tilde: z,
        theta_star: None,
        losses,
        iterations: done,
        diverged,
    })
}

/// `‖H_θ(G(z)) − y‖²` with gradients for `z` and `θ`.
pub fn partial_objective(
    cfg: &SamplerConfig,
    op: &ParametricOperator,
    y: &Tensor3,
    z: &Tensor3,
    theta: &[f64],
) -> Result<(f64, Tensor3, Vec<f64>)> {
    let states = generate_trace(cfg, z)?;
    let x = states.last().unwrap();
    let (r, loss) = sq_residual(&op.apply(x, theta)?, y)?;
    let r2 = r.scale(2.0);
    let grad_x = op.adjoint_input(theta, &r2, x.shape())?;
    let grad_z = adjoint_from_trace(cfg, &states, &grad_x)?;
    let grad_theta = op.adjoint_theta(theta, x, &r2)?;
    Ok((loss, grad_z, grad_theta))
}

pub fn partial_loss(cfg: &SamplerConfig, op: &ParametricOperator, y: &Tensor3, z: &Tensor3, theta: &[f64]) -> Result<f64> {
    Ok(sq_residual(&op.apply(&generate(cfg, z)?, theta)?, y)?.1)
}

/// Joint `(z, θ)` inversion for a known operator family with unknown kernel.
/// `latent_shape` defaults to `y`'s shape scaled back up by the family's
/// subsampling factor.
pub fn invert_partial(
    y: &Tensor3,
    cfg: &SamplerConfig,
    op: &ParametricOperator,
    latent_shape: Option<Shape>,
    opts: &InvertOptions,
    rng: &mut Rng,
) -> Result<InversionReport> {
    opts.validate()?;
    let shape = match (latent_shape, &opts.init) {
        (Some(s), _) => s,
        (None, Some(z0)) => z0.shape(),
        (None, None) => {
            let f = match op.family {
                crate::degrade::OperatorFamily::Downsample { factor } => factor,
                _ => 1,
            };
            (y.height() * f, y.width() * f, y.channels())
        }
    };
    if op.output_shape(shape) != y.shape() {
        return Err(Error::Shape {
            expected: op.output_shape(shape),
            actual: y.shape(),
        });
    }
    let mut z = match &opts.init {
        Some(z0) if z0.shape() == shape => z0.clone(),
        Some(z0) => {
            return Err(Error::Shape {
                expected: shape,
                actual: z0.shape(),
            })
        }
        None => draw_standard_normal(rng, shape),
    };
    let mut theta = match &opts.theta_init {
        ThetaInit::Zeros => vec![0.0; op.theta_len()],
        ThetaInit::Random { scale } => (0..op.theta_len()).map(|_| scale * rng.standard_normal()).collect(),
        ThetaInit::Given(t) if t.len() == op.theta_len() => t.clone(),
        ThetaInit::Given(t) => {
            return Err(Error::config(
                "theta",
                format!("expected {} logits, got {}", op.theta_len(), t.len()),
            ))
        }
    };
    let mut opt_z = Optimizer::new(opts.optimizer, opts.lr, z.len());
    let mut opt_theta = Optimizer::new(opts.optimizer, opts.theta_lr.unwrap_or(opts.lr), theta.len());
    let mut losses = Vec::with_capacity(opts.iters + 1);
    let mut diverged = false;
    let mut done = 0;
    for _ in 0..opts.iters {
        let (loss, gz, gt) = match partial_objective(cfg, op, y, &z, &theta) {
            Ok(v) if v.0.is_finite() && v.1.is_finite() && v.2.iter().all(|g| g.is_finite()) => v,
            Ok(_) | Err(Error::Numeric { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        losses.push(loss);
        let (prev_z, prev_theta) = (z.clone(), theta.clone());
        opt_z.step(z.as_mut_slice(), gz.as_slice());
        opt_theta.step(&mut theta, &gt);
        if !z.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            z = prev_z;
            theta = prev_theta;
            diverged = true;
            break;
        }
        done += 1;
    }
    if diverged {
        losses.truncate(done);
    }
    losses.push(partial_loss(cfg, op, y, &z, &theta)?);
    Ok(InversionReport {
        z_tilde: z,
        theta_star: Some(theta),
        losses,
        iterations: done,
        diverged,
    })
}

fn kernel_side(len: usize) -> Result<usize> {
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len || side == 0 {
        return Err(Error::config("theta", format!("{len} logits do not form a square kernel")));
    }
    if side.is_multiple_of(2) {
        return Err(Error::config("theta", format!("kernel side must be odd, got {side}")));
    }
    Ok(side)
}

/// `softmax(θ)` reshaped to a `K × K × 1` kernel (nonnegative, unit sum).
pub fn kernel_from_theta(theta: &[f64]) -> Result<Tensor3> {
    let side = kernel_side(theta.len())?;
    let max = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor3::from_vec((side, side, 1), exps.into_iter().map(|e| e / total).collect())
}

/// Pulls a kernel-space gradient back through the softmax:
/// `∂/∂θ = k ⊙ (g − ⟨k, g⟩)`.
pub fn kernel_theta_adjoint(theta: &[f64], grad_kernel: &[f64]) -> Result<Vec<f64>> {
    let k = kernel_from_theta(theta)?;
    if grad_kernel.len() != theta.len() {
        return Err(Error::config("theta", "kernel gradient length mismatch"));
    }
    let inner: f64 = k.as_slice().iter().zip(grad_kernel).map(|(a, b)| a * b).sum();
    Ok(k.as_slice()
        .iter()
        .zip(grad_kernel)
        .map(|(ki, gi)| ki * (gi - inner))
        .collect())
}

/// Total-variation distance `½ Σ |a − b|` between two kernels.
pub fn kernel_tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
