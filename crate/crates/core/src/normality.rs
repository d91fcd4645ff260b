//! D'Agostino–Pearson omnibus normality test and the sliding-window defect scan.
//!
//! Skewness goes through D'Agostino's (1970) transform, kurtosis through the
//! Anscombe–Glynn (1983) transform; `K² = z₁² + z₂²` is referred to χ²₂, whose
//! survival function is `exp(−K²/2)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Smallest sample for which the omnibus transforms are valid.
pub const MIN_OMNIBUS_SAMPLE: usize = 20;
/// Smallest sample for the moment statistics alone.
pub const MIN_MOMENT_SAMPLE: usize = 8;
/// Central second moment at or below this is treated as a constant sample.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Biased (divide-by-n) sample skewness `g₁ = m₃/m₂^{3/2}` and excess kurtosis
/// `g₂ = m₄/m₂² − 3`.
pub fn skew_kurt(v: &[f64]) -> Result<(f64, f64)> {
    let n = v.len();
    if n < MIN_MOMENT_SAMPLE {
        return Err(Error::SampleTooSmall {
            given: n,
            needed: MIN_MOMENT_SAMPLE,
        });
    }
    let nf = n as f64;
    let mean = v.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in v {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= DEGENERATE_VARIANCE {
        return Err(Error::DegenerateSample { variance: m2 });
    }
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

/// D'Agostino's normalizing transform of the sample skewness.
pub fn skewness_z(g1: f64, n: usize) -> f64 {
    let n = n as f64;
    let y = g1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    delta * (y / alpha).asinh()
}

/// Anscombe–Glynn normalizing transform of the sample excess kurtosis.
pub fn kurtosis_z(g2: f64, n: usize) -> f64 {
    let n = n as f64;
    let b2 = g2 + 3.0;
    let mean = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - mean) / var.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    if denom == 0.0 {
        return f64::NEG_INFINITY;
    }
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OmnibusResult {
    pub g1: f64,
    pub g2: f64,
    pub z1: f64,
    pub z2: f64,
    pub k2: f64,
    pub p: f64,
    /// Constant sample: `K² = +∞`, `p = 0`, moments undefined (NaN).
    pub degenerate: bool,
}

impl OmnibusResult {
    fn degenerate() -> Self {
        Self {
            g1: f64::NAN,
            g2: f64::NAN,
            z1: f64::INFINITY,
            z2: f64::INFINITY,
            k2: f64::INFINITY,
            p: 0.0,
            degenerate: true,
        }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

/// Survival function of χ² with two degrees of freedom.
pub fn chi2_2_survival(k2: f64) -> f64 {
    (-0.5 * k2).exp()
}

pub fn omnibus_test(v: &[f64]) -> Result<OmnibusResult> {
    let n = v.len();
    if n < MIN_OMNIBUS_SAMPLE {
        return Err(Error::SampleTooSmall {
            given: n,
            needed: MIN_OMNIBUS_SAMPLE,
        });
    }
    let (g1, g2) = match skew_kurt(v) {
        Ok(m) => m,
        Err(Error::DegenerateSample { .. }) => return Ok(OmnibusResult::degenerate()),
        Err(e) => return Err(e),
    };
    let z1 = skewness_z(g1, n);
    let z2 = kurtosis_z(g2, n);
    let k2 = z1 * z1 + z2 * z2;
    Ok(OmnibusResult {
        g1,
        g2,
        z1,
        z2,
        k2,
        p: chi2_2_survival(k2),
        degenerate: false,
    })
}

/// Window geometry and level for [`scan_mask`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanConfig {
    pub k: usize,
    pub stride: usize,
    pub alpha: f64,
}

impl ScanConfig {
    /// Validates the geometry against a tensor with `channels` channels.
    pub fn new(k: usize, stride: usize, alpha: f64, channels: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k", "window size must be positive"));
        }
        if stride == 0 {
            return Err(Error::config("stride", "stride must be positive"));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config("alpha", format!("must lie in [0, 1], got {alpha}")));
        }
        let m = channels * k * k;
        if m < MIN_OMNIBUS_SAMPLE {
            return Err(Error::config(
                "k",
                format!(
                    "window sample c·k² = {m} is below the omnibus minimum of {MIN_OMNIBUS_SAMPLE}"
                ),
            ));
        }
        Ok(Self { k, stride, alpha })
    }
}

/// Stride-spaced window origins along one axis, plus a final origin snapped to
/// the border when the stride leaves the edge uncovered.
pub fn window_offsets(len: usize, k: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=len - k).step_by(stride).collect();
    if *out.last().unwrap() + k < len {
        out.push(len - k);
    }
    out
}

#[derive(Clone, Debug)]
pub struct DefectMask {
    /// 1 where some covering window failed, else 0.
    pub mask: Tensor3,
    /// Smallest p-value among the windows covering each position.
    pub min_pvalue: Tensor3,
    pub config: ScanConfig,
    pub windows_tested: usize,
    pub windows_failed: usize,
}

impl DefectMask {
    pub fn masked_count(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn failure_rate(&self) -> f64 {
        self.windows_failed as f64 / self.windows_tested as f64
    }

    pub fn is_masked(&self, row: usize, col: usize, channel: usize) -> bool {
        self.mask[(row, col, channel)] != 0.0
    }
}

/// Tests every `k × k × c` window and marks the footprint of each one whose
/// omnibus p-value falls below `alpha`.
pub fn scan_mask(z: &Tensor3, cfg: &ScanConfig) -> Result<DefectMask> {
    let cfg = ScanConfig::new(cfg.k, cfg.stride, cfg.alpha, z.channels())?;
    let k = cfg.k;
    if k > z.height().min(z.width()) {
        return Err(Error::config(
            "k",
            format!("window {k} exceeds the {}×{} tensor", z.height(), z.width()),
        ));
    }
    let rows = window_offsets(z.height(), k, cfg.stride);
    let cols = window_offsets(z.width(), k, cfg.stride);
    let origins: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    let pvalues: Vec<f64> = origins
        .par_iter()
        .map(|&(r, c)| omnibus_test(&z.window(r, c, k)).map(|res| res.p))
        .collect::<Result<_>>()?;

    let mut mask = Tensor3::zeros(z.shape());
    let mut min_p = Tensor3::filled(z.shape(), 1.0);
    let mut failed = 0;
    for (&(r, c), &p) in origins.iter().zip(&pvalues) {
        let fails = p < cfg.alpha;
        failed += fails as usize;
        for i in r..r + k {
            for j in c..c + k {
                for v in 0..z.channels() {
                    if fails {
                        mask[(i, j, v)] = 1.0;
                    }
                    let slot = &mut min_p[(i, j, v)];
                    *slot = slot.min(p);
                }
            }
        }
    }
    Ok(DefectMask {
        mask,
        min_pvalue: min_p,
        config: cfg,
        windows_tested: origins.len(),
        windows_failed: failed,
    })
}

/// Fraction of non-overlapping `k × k × c` tiles that fail at level `alpha`.
pub fn tile_failure_rate(z: &Tensor3, k: usize, alpha: f64) -> Result<f64> {
    let cfg = ScanConfig::new(k, k, alpha, z.channels())?;
    Ok(scan_mask(z, &cfg)?.failure_rate())
}
