//! Degradation operators `H`.
//!
//! Blurs are 2-D convolutions with reflect padding (the border sample is not
//! repeated), applied channel by channel with one kernel. Downsampling blurs
//! first and then keeps every `f`-th pixel. The linear operators have exact
//! adjoints with respect to both the input and the kernel; the kernel path
//! chains through [`crate::inversion::kernel_from_theta`] for the
//! partially blind solver.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::inversion::{kernel_from_theta, kernel_theta_adjoint};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor3};

#[derive(Clone, Debug, PartialEq)]
pub enum Degradation {
    GaussianBlur { sigma: f64, size: usize },
    MotionBlur { angle: f64, length: f64, size: usize },
    /// Gaussian pre-blur (`sigma = 0` is a delta) then stride-`factor` subsampling.
    Downsample { factor: usize, size: usize, sigma: f64 },
    Quantize { levels: usize },
    Streaks { density: f64, intensity: f64 },
}

/// A degradation plus optional additive Gaussian noise applied last, on the
/// `[−1, 1]` pixel range.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub op: Degradation,
    pub noise_sigma: f64,
}

impl DegradationSpec {
    pub fn new(op: Degradation) -> Self {
        Self { op, noise_sigma: 0.0 }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let odd = |size: usize| {
            if size % 2 == 1 {
                Ok(())
            } else {
                Err(Error::config("size", format!("kernel size must be odd, got {size}")))
            }
        };
        match self.op {
            Degradation::GaussianBlur { sigma, size } => {
                odd(size)?;
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::config("sigma", "must be non-negative"));
                }
            }
            Degradation::MotionBlur { length, size, angle } => {
                odd(size)?;
                if !(length >= 1.0 && length.is_finite() && angle.is_finite()) {
                    return Err(Error::config("length", "must be at least 1"));
                }
            }
            Degradation::Downsample { factor, size, sigma } => {
                odd(size)?;
                if factor == 0 {
                    return Err(Error::config("factor", "must be at least 1"));
                }
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::config("sigma", "must be non-negative"));
                }
            }
            Degradation::Quantize { levels } => {
                if levels < 2 {
                    return Err(Error::config("levels", format!("need at least 2, got {levels}")));
                }
            }
            Degradation::Streaks { density, intensity } => {
                if !(0.0..=1.0).contains(&density) || !intensity.is_finite() {
                    return Err(Error::config("density", "must lie in [0, 1]"));
                }
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise", "must be non-negative"));
        }
        Ok(())
    }

    /// Kernel of a blur-type degradation, `None` for the non-linear kinds.
    pub fn kernel(&self) -> Option<Vec<f64>> {
        match self.op {
            Degradation::GaussianBlur { sigma, size } => Some(gaussian_kernel(size, sigma)),
            Degradation::MotionBlur { angle, length, size } => Some(motion_kernel(size, angle, length)),
            Degradation::Downsample { size, sigma, .. } => Some(gaussian_kernel(size, sigma)),
            _ => None,
        }
    }

    /// Output shape for an input of shape `shape`.
    pub fn output_shape(&self, shape: Shape) -> Shape {
        match self.op {
            Degradation::Downsample { factor, .. } => subsampled_shape(shape, factor),
            _ => shape,
        }
    }

    /// `y = H(x)`; `rng` feeds the streak pattern and the additive noise.
    pub fn apply(&self, x: &Tensor3, rng: &mut Rng) -> Result<Tensor3> {
        self.validate()?;
        let mut y = match &self.op {
            Degradation::GaussianBlur { size, .. } | Degradation::MotionBlur { size, .. } => {
                convolve(x, &self.kernel().unwrap(), *size)?
            }
            Degradation::Downsample { factor, size, .. } => {
                subsample(&convolve(x, &self.kernel().unwrap(), *size)?, *factor)
            }
            Degradation::Quantize { levels } => quantize(x, *levels),
            Degradation::Streaks { density, intensity } => streaks(x, *density, *intensity, rng),
        };
        if self.noise_sigma > 0.0 {
            for v in y.as_mut_slice() {
                *v += self.noise_sigma * rng.standard_normal();
            }
        }
        Ok(y)
    }

    /// Adjoint of the noiseless linear part with respect to the input.
    pub fn adjoint_input(&self, v: &Tensor3, input_shape: Shape) -> Result<Tensor3> {
        self.validate()?;
        match self.op {
            Degradation::GaussianBlur { size, .. } | Degradation::MotionBlur { size, .. } => {
                convolve_adjoint(v, &self.kernel().unwrap(), size)
            }
            Degradation::Downsample { factor, size, .. } => {
                let up = subsample_adjoint(v, factor, input_shape)?;
                convolve_adjoint(&up, &self.kernel().unwrap(), size)
            }
            _ => Err(Error::Capability(format!("{} has no linear adjoint", self.kind_name()))),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.op {
            Degradation::GaussianBlur { .. } => "gaussian_blur",
            Degradation::MotionBlur { .. } => "motion_blur",
            Degradation::Downsample { .. } => "downsample",
            Degradation::Quantize { .. } => "quantize",
            Degradation::Streaks { .. } => "streaks",
        }
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            Degradation::GaussianBlur { sigma, size } => write!(f, "gaussian_blur:sigma={sigma},size={size}")?,
            Degradation::MotionBlur { angle, length, size } => {
                write!(f, "motion_blur:angle={angle},length={length},size={size}")?
            }
            Degradation::Downsample { factor, size, sigma } => {
                write!(f, "downsample:factor={factor},size={size},sigma={sigma}")?
            }
            Degradation::Quantize { levels } => write!(f, "quantize:levels={levels}")?,
            Degradation::Streaks { density, intensity } => {
                write!(f, "streaks:density={density},intensity={intensity}")?
            }
        }
        if self.noise_sigma > 0.0 {
            write!(f, ",noise={}", self.noise_sigma)?;
        }
        Ok(())
    }
}

/// Parses `kind:key=value,...`, e.g. `gaussian_blur:sigma=2,size=9,noise=0.03`.
/// Missing keys take documented defaults.
impl FromStr for DegradationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params: Vec<(&str, &str)> = Vec::new();
        for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::config("degradation", format!("expected key=value, got {pair:?}")))?;
            params.push((k.trim(), v.trim()));
        }
        let mut used = vec![false; params.len()];
        let mut get = |key: &str, default: f64| -> Result<f64> {
            match params.iter().position(|(k, _)| *k == key) {
                Some(i) => {
                    used[i] = true;
                    params[i]
                        .1
                        .parse()
                        .map_err(|_| Error::config(key, format!("not a number: {:?}", params[i].1)))
                }
                None => Ok(default),
            }
        };
        let int = |v: f64, key: &str| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::config(key, format!("expected a non-negative integer, got {v}")))
            }
        };
        let op = match kind.trim() {
            "gaussian_blur" => Degradation::GaussianBlur {
                sigma: get("sigma", 2.0)?,
                size: int(get("size", 9.0)?, "size")?,
            },
            "motion_blur" => Degradation::MotionBlur {
                angle: get("angle", 0.0)?,
                length: get("length", 5.0)?,
                size: int(get("size", 9.0)?, "size")?,
            },
            "downsample" => Degradation::Downsample {
                factor: int(get("factor", 2.0)?, "factor")?,
                size: int(get("size", 5.0)?, "size")?,
                sigma: get("sigma", 1.0)?,
            },
            "quantize" => Degradation::Quantize {
                levels: int(get("levels", 8.0)?, "levels")?,
            },
            "streaks" => Degradation::Streaks {
                density: get("density", 0.02)?,
                intensity: get("intensity", 0.8)?,
            },
            other => return Err(Error::config("degradation", format!("unknown kind {other:?}"))),
        };
        let noise_sigma = get("noise", 0.0)?;
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::config(params[i].0, format!("unknown parameter for {}", kind.trim())));
        }
        let spec = DegradationSpec { op, noise_sigma };
        spec.validate()?;
        Ok(spec)
    }
}

/// Normalized `size × size` Gaussian; `sigma = 0` gives the delta kernel.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size * size)
        .map(|idx| {
            let (a, b) = ((idx / size) as f64 - r, (idx % size) as f64 - r);
            if sigma == 0.0 {
                if a == 0.0 && b == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (-(a * a + b * b) / (2.0 * sigma * sigma)).exp()
            }
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Normalized line kernel of `length` pixels through the center at `angle`
/// degrees from the horizontal, rasterized by bilinear splatting.
pub fn motion_kernel(size: usize, angle: f64, length: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let (dy, dx) = (-angle.to_radians().sin(), angle.to_radians().cos());
    let half = (length - 1.0) / 2.0;
    let samples = ((length - 1.0) * 4.0).ceil() as usize + 1;
    let mut k = vec![0.0; size * size];
    for s in 0..samples {
        let t = if samples == 1 {
            0.0
        } else {
            -half + 2.0 * half * s as f64 / (samples - 1) as f64
        };
        let (y, x) = (r + t * dy, r + t * dx);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let (yy, xx) = (y0 + oy, x0 + ox);
                if yy >= 0.0 && xx >= 0.0 && (yy as usize) < size && (xx as usize) < size {
                    k[yy as usize * size + xx as usize] += wy * wx;
                }
            }
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn check_kernel(x: &Tensor3, kernel: &[f64], size: usize) -> Result<()> {
    if size.is_multiple_of(2) || kernel.len() != size * size {
        return Err(Error::config("size", format!("kernel must be odd-sized, got {size}")));
    }
    if size > x.height() || size > x.width() {
        return Err(Error::config(
            "size",
            format!("{size}×{size} kernel larger than {}×{} image", x.height(), x.width()),
        ));
    }
    Ok(())
}

/// `out(i, j) = Σ_{a,b} k(a, b) · x(i + a − r, j + b − r)` with reflect padding.
pub fn convolve(x: &Tensor3, kernel: &[f64], size: usize) -> Result<Tensor3> {
    check_kernel(x, kernel, size)?;
    let (h, w, c) = x.shape();
    let r = (size / 2) as isize;
    let mut out = Tensor3::zeros(x.shape());
    for i in 0..h {
        for j in 0..w {
            for a in 0..size {
                let si = reflect(i as isize + a as isize - r, h);
                for b in 0..size {
                    let kv = kernel[a * size + b];
                    if kv == 0.0 {
                        continue;
                    }
                    let sj = reflect(j as isize + b as isize - r, w);
                    for v in 0..c {
                        out[(i, j, v)] += kv * x[(si, sj, v)];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`convolve`] in its input: scatters through the same
/// reflected index map.
pub fn convolve_adjoint(g: &Tensor3, kernel: &[f64], size: usize) -> Result<Tensor3> {
    check_kernel(g, kernel, size)?;
    let (h, w, c) = g.shape();
    let r = (size / 2) as isize;
    let mut out = Tensor3::zeros(g.shape());
    for i in 0..h {
        for j in 0..w {
            for a in 0..size {
                let si = reflect(i as isize + a as isize - r, h);
                for b in 0..size {
                    let kv = kernel[a * size + b];
                    if kv == 0.0 {
                        continue;
                    }
                    let sj = reflect(j as isize + b as isize - r, w);
                    for v in 0..c {
                        out[(si, sj, v)] += kv * g[(i, j, v)];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `⟨convolve(x, k), g⟩` with respect to the kernel entries.
pub fn convolve_kernel_grad(x: &Tensor3, g: &Tensor3, size: usize) -> Result<Vec<f64>> {
    x.same_shape(g)?;
    check_kernel(x, &vec![0.0; size * size], size)?;
    let (h, w, c) = x.shape();
    let r = (size / 2) as isize;
    let mut out = vec![0.0; size * size];
    for i in 0..h {
        for j in 0..w {
            for a in 0..size {
                let si = reflect(i as isize + a as isize - r, h);
                for b in 0..size {
                    let sj = reflect(j as isize + b as isize - r, w);
                    let mut acc = 0.0;
                    for v in 0..c {
                        acc += x[(si, sj, v)] * g[(i, j, v)];
                    }
                    out[a * size + b] += acc;
                }
            }
        }
    }
    Ok(out)
}

pub fn subsampled_shape((h, w, c): Shape, factor: usize) -> Shape {
    (h.div_ceil(factor), w.div_ceil(factor), c)
}

/// Keeps pixels `(i·f, j·f)`.
pub fn subsample(x: &Tensor3, factor: usize) -> Tensor3 {
    let shape = subsampled_shape(x.shape(), factor);
    Tensor3::from_fn(shape, |i, j, v| x[(i * factor, j * factor, v)])
}

/// Zero insertion: adjoint of [`subsample`].
pub fn subsample_adjoint(g: &Tensor3, factor: usize, input_shape: Shape) -> Result<Tensor3> {
    let expected = subsampled_shape(input_shape, factor);
    if g.shape() != expected {
        return Err(Error::Shape {
            expected,
            actual: g.shape(),
        });
    }
    let mut out = Tensor3::zeros(input_shape);
    for i in 0..expected.0 {
        for j in 0..expected.1 {
            for v in 0..expected.2 {
                out[(i * factor, j * factor, v)] = g[(i, j, v)];
            }
        }
    }
    Ok(out)
}

/// Snaps each entry to the nearest of `levels` evenly spaced values
/// `−1 + 2i/(L−1)` on the clamped `[−1, 1]` range.
pub fn quantize(x: &Tensor3, levels: usize) -> Tensor3 {
    let half = (levels - 1) as f64 / 2.0;
    x.map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * half).round() / half - 1.0)
}

/// Bright oriented line segments, one shared slant per image, added and then
/// clamped to `[−1, 1]`.
pub fn streaks(x: &Tensor3, density: f64, intensity: f64, rng: &mut Rng) -> Tensor3 {
    let (h, w, c) = x.shape();
    let angle = (70.0 + 40.0 * rng.uniform()).to_radians();
    let (dy, dx) = (angle.sin(), angle.cos());
    let count = (density * (h * w) as f64).round() as usize;
    let mut overlay = vec![0.0; h * w];
    for _ in 0..count {
        let (y0, x0) = (rng.uniform() * h as f64, rng.uniform() * w as f64);
        let len = (h as f64 / 4.0) * (1.0 + rng.uniform());
        let gain = intensity * (0.6 + 0.4 * rng.uniform());
        let mut visited = Vec::new();
        let mut s = 0.0;
        while s <= len {
            let (yy, xx) = ((y0 + s * dy).floor(), (x0 + s * dx).floor());
            if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
                let idx = yy as usize * w + xx as usize;
                if !visited.contains(&idx) {
                    visited.push(idx);
                }
            }
            s += 0.5;
        }
        for idx in visited {
            overlay[idx] += gain;
        }
    }
    Tensor3::from_fn((h, w, c), |i, j, v| (x[(i, j, v)] + overlay[i * w + j]).clamp(-1.0, 1.0))
}

/// Blur family whose kernel is free and parameterized by softmax logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorFamily {
    GaussianBlur,
    MotionBlur,
    Downsample { factor: usize },
}

impl FromStr for OperatorFamily {
    type Err = Error;

    /// `gaussian_blur`, `motion_blur`, `downsample` (factor 2) or `downsample_<f>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_blur" => Ok(Self::GaussianBlur),
            "motion_blur" => Ok(Self::MotionBlur),
            "downsample" => Ok(Self::Downsample { factor: 2 }),
            other => match other.strip_prefix("downsample_").map(str::parse::<usize>) {
                Some(Ok(f)) if f >= 1 => Ok(Self::Downsample { factor: f }),
                _ => Err(Error::config("degradation_kind", format!("unknown operator family {other:?}"))),
            },
        }
    }
}

impl fmt::Display for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GaussianBlur => write!(f, "gaussian_blur"),
            Self::MotionBlur => write!(f, "motion_blur"),
            Self::Downsample { factor } => write!(f, "downsample_{factor}"),
        }
    }
}

/// `H_θ`: convolution with `softmax(θ)` reshaped `size × size`, followed by
/// subsampling for the downsample family.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricOperator {
    pub family: OperatorFamily,
    pub size: usize,
}

impl ParametricOperator {
    pub fn new(family: OperatorFamily, size: usize) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::config("kernel_size", format!("must be odd, got {size}")));
        }
        Ok(Self { family, size })
    }

    /// The differentiable counterpart of a fixed degradation, if one exists.
    pub fn for_spec(spec: &DegradationSpec) -> Result<(Self, Vec<f64>)> {
        let (family, size) = match spec.op {
            Degradation::GaussianBlur { size, .. } => (OperatorFamily::GaussianBlur, size),
            Degradation::MotionBlur { size, .. } => (OperatorFamily::MotionBlur, size),
            Degradation::Downsample { factor, size, .. } => (OperatorFamily::Downsample { factor }, size),
            _ => {
                return Err(Error::Capability(format!(
                    "{} is not a differentiable operator family",
                    spec.kind_name()
                )))
            }
        };
        Ok((Self::new(family, size)?, spec.kernel().unwrap()))
    }

    pub fn theta_len(&self) -> usize {
        self.size * self.size
    }

    fn factor(&self) -> usize {
        match self.family {
            OperatorFamily::Downsample { factor } => factor,
            _ => 1,
        }
    }

    pub fn output_shape(&self, shape: Shape) -> Shape {
        subsampled_shape(shape, self.factor())
    }

    pub fn apply(&self, x: &Tensor3, theta: &[f64]) -> Result<Tensor3> {
        let k = kernel_from_theta(theta)?;
        Ok(subsample(&convolve(x, k.as_slice(), self.size)?, self.factor()))
    }

    /// `Hᵀ v` for the current θ.
    pub fn adjoint_input(&self, theta: &[f64], v: &Tensor3, input_shape: Shape) -> Result<Tensor3> {
        let k = kernel_from_theta(theta)?;
        let up = subsample_adjoint(v, self.factor(), input_shape)?;
        convolve_adjoint(&up, k.as_slice(), self.size)
    }

    /// Gradient of `⟨H_θ x, v⟩` with respect to θ.
    pub fn adjoint_theta(&self, theta: &[f64], x: &Tensor3, v: &Tensor3) -> Result<Vec<f64>> {
        let up = subsample_adjoint(v, self.factor(), x.shape())?;
        let grad_kernel = convolve_kernel_grad(x, &up, self.size)?;
        kernel_theta_adjoint(theta, &grad_kernel)
    }
}
