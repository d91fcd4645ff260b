//! Fidelity metrics.

use crate::error::Result;
use crate::tensor::Tensor3;

/// Peak-to-peak range of the `[−1, 1]` image convention.
pub const UNIT_RANGE_PEAK: f64 = 2.0;

pub fn mse(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.sq_dist(b) / a.len() as f64)
}

/// `10 log₁₀(peak² / MSE)`; `+∞` when the inputs are identical.
pub fn psnr(a: &Tensor3, b: &Tensor3, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Mean SSIM over all valid Gaussian windows (11×11, σ = 1.5) and channels,
/// with `C₁ = (0.01·peak)²` and `C₂ = (0.03·peak)²`. Images smaller than the
/// window use the largest odd window that fits.
pub fn ssim(a: &Tensor3, b: &Tensor3, peak: f64) -> Result<f64> {
    a.same_shape(b)?;
    let (h, w, c) = a.shape();
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let r = size as f64 / 2.0 - 0.5;
    let mut g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);

    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let (oh, ow) = (h - size + 1, w - size + 1);
    let mut total = 0.0;
    for v in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (di, gi) in g.iter().enumerate() {
                    for (dj, gj) in g.iter().enumerate() {
                        let wgt = gi * gj;
                        let x = a[(i + di, j + dj, v)];
                        let y = b[(i + di, j + dj, v)];
                        ma += wgt * x;
                        mb += wgt * y;
                        saa += wgt * x * x;
                        sbb += wgt * y * y;
                        sab += wgt * x * y;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    Ok(total / (oh * ow * c) as f64)
}
