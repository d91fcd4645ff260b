//! Noise schedules and score models.
//!
//! A [`ScoreModel`] predicts the noise component `ε(x, t)` of a diffused sample
//! and exposes the vector–Jacobian product `(∂ε/∂x)ᵀ v` that gradient-based
//! inversion needs. Two implementations live here: the analytic isotropic
//! Gaussian mixture [`GmmPrior`], whose diffused marginals stay Gaussian
//! mixtures in closed form, and a small SiLU network [`MlpScore`] loaded from
//! disk.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor3};

/// Linear-β diffusion schedule on steps `1..=T`, with `ᾱ_0 ≡ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

impl NoiseSchedule {
    /// β linearly interpolated from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::config("steps", format!("need at least 2 steps, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(
                "beta",
                format!("need 0 < beta_start ≤ beta_end < 1, got {beta_start}, {beta_end}"),
            ));
        }
        let span = (steps - 1) as f64;
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
            .collect();
        Ok(Self::from_betas_unchecked(betas))
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::config("steps", "need at least 2 steps"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::config("beta", format!("β must lie in (0, 1), got {b}")));
        }
        Ok(Self::from_betas_unchecked(betas))
    }

    fn from_betas_unchecked(betas: Vec<f64>) -> Self {
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Self { betas, alpha_bars }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `t ∈ 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t` for `t ∈ 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::config("t", format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap()
    }
}

/// Noise predictor with an input adjoint.
///
/// Implementations must be pure: no interior mutability in either method.
pub trait ScoreModel: Send + Sync {
    fn epsilon(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize) -> Result<Tensor3>;

    /// `(∂ε/∂x)ᵀ v` at `(x, t)`.
    fn epsilon_vjp(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize, v: &Tensor3) -> Result<Tensor3>;
}

/// Isotropic Gaussian mixture `Σ w_i N(μ_i, σ_i² I)` over tensors of one shape.
#[derive(Clone, Debug)]
pub struct GmmPrior {
    weights: Vec<f64>,
    variances: Vec<f64>,
    means: Vec<Tensor3>,
}

/// Per-evaluation intermediates shared by `epsilon`, `epsilon_vjp` and `log_density`.
struct Posterior {
    resp: Vec<f64>,
    /// `u_i = (x − √ᾱ μ_i) / s_i²`
    whitened: Vec<Vec<f64>>,
    inv_s2: Vec<f64>,
    log_norm: f64,
}

impl GmmPrior {
    /// Weights must be positive and sum to one (up to 1e−6, then renormalized exactly).
    pub fn new(weights: Vec<f64>, variances: Vec<f64>, means: Vec<Tensor3>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::config("components", "mixture needs at least one component"));
        }
        if variances.len() != k || means.len() != k {
            return Err(Error::config("components", "weights, variances and means differ in length"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::config("weight", "weights must be positive"));
        }
        if variances.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("variance", "variances must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::config("weight", format!("weights sum to {total}, expected 1")));
        }
        for m in &means[1..] {
            means[0].same_shape(m)?;
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            weights,
            variances,
            means,
        })
    }

    /// Single component `N(mean, variance · I)`.
    pub fn single(mean: Tensor3, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![variance], vec![mean])
    }

    /// Seeded mixture of `components` equally weighted modes with image-like
    /// means: a smooth gradient plus a few flat rectangles, inside `[−0.85, 0.85]`.
    pub fn synthetic(rng: &mut Rng, shape: Shape, components: usize, variance: f64) -> Result<Self> {
        if components == 0 {
            return Err(Error::config("components", "need at least one component"));
        }
        let means = (0..components).map(|_| synthetic_mean(rng, shape)).collect();
        let w = 1.0 / components as f64;
        Self::new(vec![w; components], vec![variance; components], means)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn shape(&self) -> Shape {
        self.means[0].shape()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn means(&self) -> &[Tensor3] {
        &self.means
    }

    /// Exact draw from the clean prior. Returns the sample and its component.
    pub fn sample(&self, rng: &mut Rng) -> (Tensor3, usize) {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut comp = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = i;
                break;
            }
        }
        let sd = self.variances[comp].sqrt();
        let mut x = self.means[comp].clone();
        for v in x.as_mut_slice() {
            *v += sd * rng.standard_normal();
        }
        (x, comp)
    }

    fn posterior(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize) -> Result<Posterior> {
        self.means[0].same_shape(x)?;
        let ab = sched.alpha_bar(t);
        let a = ab.sqrt();
        let d = x.len() as f64;
        let k = self.components();
        let mut logits = Vec::with_capacity(k);
        let mut whitened = Vec::with_capacity(k);
        let mut inv_s2 = Vec::with_capacity(k);
        for i in 0..k {
            let s2 = ab * self.variances[i] + (1.0 - ab);
            let inv = 1.0 / s2;
            let diff: Vec<f64> = x
                .as_slice()
                .iter()
                .zip(self.means[i].as_slice())
                .map(|(xv, m)| xv - a * m)
                .collect();
            let sq: f64 = diff.iter().map(|v| v * v).sum();
            logits.push(
                self.weights[i].ln() - 0.5 * d * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * sq * inv,
            );
            whitened.push(diff.into_iter().map(|v| v * inv).collect());
            inv_s2.push(inv);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_norm = max + sum.ln();
        let resp = logits.iter().map(|l| (l - log_norm).exp()).collect();
        Ok(Posterior {
            resp,
            whitened,
            inv_s2,
            log_norm,
        })
    }

    /// Posterior component responsibilities of `x` under the step-`t` marginal.
    pub fn responsibilities(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize) -> Result<Vec<f64>> {
        Ok(self.posterior(sched, x, t)?.resp)
    }

    /// `log p_t(x)` of the diffused marginal `Σ w_i N(√ᾱ_t μ_i, s_i² I)`.
    pub fn log_density(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize) -> Result<f64> {
        Ok(self.posterior(sched, x, t)?.log_norm)
    }
}

impl ScoreModel for GmmPrior {
    fn epsilon(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize) -> Result<Tensor3> {
        sched.check_step(t)?;
        let post = self.posterior(sched, x, t)?;
        let c = (1.0 - sched.alpha_bar(t)).sqrt();
        let mut out = vec![0.0; x.len()];
        for (r, u) in post.resp.iter().zip(&post.whitened) {
            for (o, ui) in out.iter_mut().zip(u) {
                *o += r * ui;
            }
        }
        out.iter_mut().for_each(|o| *o *= c);
        Ok(x.with_data(out))
    }

    /// `J = c · (Σ r_i / s_i² · I + ū ūᵀ − Σ r_i u_i u_iᵀ)` with `ū = Σ r_i u_i`;
    /// `J` is symmetric, so the product is applied directly.
    fn epsilon_vjp(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize, v: &Tensor3) -> Result<Tensor3> {
        sched.check_step(t)?;
        x.same_shape(v)?;
        let post = self.posterior(sched, x, t)?;
        let c = (1.0 - sched.alpha_bar(t)).sqrt();
        let v = v.as_slice();
        let diag: f64 = post.resp.iter().zip(&post.inv_s2).map(|(r, i)| r * i).sum();
        let mut u_bar = vec![0.0; v.len()];
        let mut out: Vec<f64> = v.iter().map(|vi| diag * vi).collect();
        for (r, u) in post.resp.iter().zip(&post.whitened) {
            let proj: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            for ((o, ub), ui) in out.iter_mut().zip(u_bar.iter_mut()).zip(u) {
                *o -= r * proj * ui;
                *ub += r * ui;
            }
        }
        let proj_bar: f64 = u_bar.iter().zip(v).map(|(a, b)| a * b).sum();
        for (o, ub) in out.iter_mut().zip(&u_bar) {
            *o = c * (*o + proj_bar * ub);
        }
        Ok(x.with_data(out))
    }
}

fn synthetic_mean(rng: &mut Rng, (h, w, c): Shape) -> Tensor3 {
    let gx = rng.uniform() * 2.0 - 1.0;
    let gy = rng.uniform() * 2.0 - 1.0;
    let base: Vec<f64> = (0..c).map(|_| rng.uniform() * 0.8 - 0.4).collect();
    let mut m = Tensor3::from_fn((h, w, c), |i, j, v| {
        let y = i as f64 / h.max(2) as f64 - 0.5;
        let x = j as f64 / w.max(2) as f64 - 0.5;
        base[v] + 0.5 * (gx * x + gy * y)
    });
    let rects = 2 + rng.below(3);
    for _ in 0..rects {
        let rh = 1 + rng.below(h.div_ceil(2));
        let rw = 1 + rng.below(w.div_ceil(2));
        let r0 = rng.below(h - rh + 1);
        let c0 = rng.below(w - rw + 1);
        let level: Vec<f64> = {
            let l = rng.uniform() * 1.6 - 0.8;
            (0..c).map(|_| l + 0.2 * (rng.uniform() - 0.5)).collect()
        };
        for i in r0..r0 + rh {
            for j in c0..c0 + rw {
                for (v, lv) in level.iter().enumerate() {
                    m[(i, j, v)] = *lv;
                }
            }
        }
    }
    m.map(|v| v.clamp(-0.85, 0.85))
}

/// Reads a mixture description: one `weight variance mean-path` line per
/// component, `#` comments, relative paths resolved against the file's directory.
pub fn load_gmm(path: impl AsRef<Path>) -> Result<GmmPrior> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let (mut weights, mut variances, mut means) = (vec![], vec![], vec![]);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::format(
                "prior line",
                format!("line {}: expected `weight variance path`", lineno + 1),
            ));
        }
        let num = |s: &str, field: &'static str| {
            s.parse::<f64>()
                .map_err(|_| Error::format(field, format!("line {}: {s:?}", lineno + 1)))
        };
        weights.push(num(fields[0], "weight")?);
        variances.push(num(fields[1], "variance")?);
        let mean_path = PathBuf::from(fields[2]);
        let mean_path = if mean_path.is_absolute() {
            mean_path
        } else {
            dir.join(mean_path)
        };
        means.push(io::read_tensor(mean_path)?);
    }
    GmmPrior::new(weights, variances, means)
}

/// Writes `prior.txt` plus one `mean_NNN.i2rt` per component into `dir`.
/// Returns the path of the description file.
pub fn save_gmm(prior: &GmmPrior, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = String::from("# weight variance mean\n");
    for (i, ((w, s2), m)) in prior
        .weights
        .iter()
        .zip(&prior.variances)
        .zip(&prior.means)
        .enumerate()
    {
        let name = format!("mean_{i:03}.i2rt");
        io::write_tensor(m, dir.join(&name))?;
        text.push_str(&format!("{w:e} {s2:e} {name}\n"));
    }
    let path = dir.join("prior.txt");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub const MLP_MAGIC: &[u8; 4] = b"I2RM";

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn backward(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (row, gi) in self.weights.chunks_exact(self.inputs).zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }
}

/// Fully connected noise predictor: `flatten(x) ‖ t/T` through affine+SiLU
/// layers, with an affine-only last layer.
#[derive(Clone, Debug)]
pub struct MlpScore {
    layers: Vec<DenseLayer>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl MlpScore {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::format("layers", "no layers"))?;
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::format("layer dims", format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::format("layer dims", format!("layer {i} payload size")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::format(
                    "layer dims",
                    format!(
                        "layer {i} emits {} values, layer {} expects {}",
                        pair[0].outputs,
                        i + 1,
                        pair[1].inputs
                    ),
                ));
            }
        }
        let last = layers.last().unwrap();
        if first.inputs != last.outputs + 1 {
            return Err(Error::format(
                "layer dims",
                format!("input dim {} must be output dim {} + 1", first.inputs, last.outputs),
            ));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    fn input(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize) -> Result<Vec<f64>> {
        sched.check_step(t)?;
        if x.len() + 1 != self.layers[0].inputs {
            return Err(Error::format(
                "layer dims",
                format!("network expects {} pixels, tensor has {}", self.layers[0].inputs - 1, x.len()),
            ));
        }
        let mut a = x.as_slice().to_vec();
        a.push(t as f64 / sched.steps() as f64);
        Ok(a)
    }

    /// Forward pass keeping each hidden layer's pre-activation.
    fn forward(&self, input: Vec<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = input;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a);
            if i + 1 == n {
                return (z, pre);
            }
            a = z.iter().map(|&v| silu(v)).collect();
            pre.push(z);
        }
        unreachable!()
    }
}

impl ScoreModel for MlpScore {
    fn epsilon(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize) -> Result<Tensor3> {
        let (out, _) = self.forward(self.input(sched, x, t)?);
        Ok(x.with_data(out))
    }

    fn epsilon_vjp(&self, sched: &NoiseSchedule, x: &Tensor3, t: usize, v: &Tensor3) -> Result<Tensor3> {
        x.same_shape(v)?;
        let (_, pre) = self.forward(self.input(sched, x, t)?);
        let mut g = v.as_slice().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                for (gi, z) in g.iter_mut().zip(&pre[i]) {
                    *gi *= silu_grad(*z);
                }
            }
            g = layer.backward(&g);
        }
        g.pop(); // time input
        Ok(x.with_data(g))
    }
}

pub fn encode_mlp(model: &MlpScore) -> Vec<u8> {
    let mut out = MLP_MAGIC.to_vec();
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
        out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let b = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format(field, "truncated"))?;
        self.pos += n;
        Ok(b)
    }

    fn u32(&mut self, field: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_mlp(bytes: &[u8]) -> Result<MlpScore> {
    if bytes.len() < 4 || &bytes[..4] != MLP_MAGIC {
        return Err(Error::format("magic", "expected \"I2RM\""));
    }
    let mut r = ByteReader { bytes, pos: 4 };
    let count = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let inputs = r.u32("layer dims")?;
        let outputs = r.u32("layer dims")?;
        let n = inputs
            .checked_mul(outputs)
            .and_then(|v| v.checked_add(outputs))
            .ok_or_else(|| Error::format("layer dims", "layer too large"))?;
        let vals: Vec<f64> = r
            .take(4 * n, "weights")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("weights", "non-finite weight"));
        }
        let (w, b) = vals.split_at(inputs * outputs);
        layers.push(DenseLayer {
            inputs,
            outputs,
            weights: w.to_vec(),
            bias: b.to_vec(),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format("weights", "trailing bytes after last layer"));
    }
    MlpScore::new(layers)
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<MlpScore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mlp(&bytes)
}

pub fn save_mlp(model: &MlpScore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mlp(model)).map_err(|e| Error::io(path, e))
}
