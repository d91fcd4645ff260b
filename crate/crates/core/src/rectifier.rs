//! Noise rectification: per-channel `k × k` tiles of the inverted noise that
//! touch the defect mask are swapped for their nearest neighbour in a bank of
//! genuine `N(0, I)` patches, then blended back through the mask.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::normality::{window_offsets, DefectMask};
use crate::rng::Rng;
use crate::tensor::Tensor3;

pub const DEFAULT_BANK_SIZE: usize = 50_000;
pub const DEFAULT_TILE: usize = 4;

/// `size` flattened `k × k` standard-normal patches.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBank {
    k: usize,
    patches: Vec<f64>,
    seed: u64,
}

impl PatchBank {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn patch_len(&self) -> usize {
        self.k * self.k
    }

    pub fn len(&self) -> usize {
        self.patches.len() / self.patch_len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn patch(&self, index: usize) -> &[f64] {
        let n = self.patch_len();
        &self.patches[index * n..(index + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.patches.chunks_exact(self.patch_len())
    }

    /// Bank from explicit patches, each of length `k²`.
    pub fn from_patches(k: usize, patches: Vec<Vec<f64>>) -> Result<Self> {
        if k == 0 || patches.is_empty() {
            return Err(Error::config("bank", "need k ≥ 1 and at least one patch"));
        }
        if patches.iter().any(|p| p.len() != k * k) {
            return Err(Error::config("bank", format!("every patch must hold {} values", k * k)));
        }
        Ok(Self {
            k,
            patches: patches.concat(),
            seed: 0,
        })
    }
}

pub fn build_bank(rng: &mut Rng, size: usize, k: usize) -> Result<PatchBank> {
    if size == 0 {
        return Err(Error::config("bank_size", "must be at least 1"));
    }
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    let mut patches = vec![0.0; size * k * k];
    rng.fill_normal(&mut patches);
    Ok(PatchBank {
        k,
        patches,
        seed: rng.seed(),
    })
}

/// Exact brute-force nearest neighbour under squared Euclidean distance; ties
/// go to the lowest index. Returns `(index, squared distance)`.
pub fn nearest_patch(bank: &PatchBank, query: &[f64]) -> Result<(usize, f64)> {
    if query.len() != bank.patch_len() {
        return Err(Error::config(
            "query",
            format!("expected {} values, got {}", bank.patch_len(), query.len()),
        ));
    }
    let mut best = (0, f64::INFINITY);
    for (i, p) in bank.iter().enumerate() {
        let mut d = 0.0;
        for (a, b) in p.iter().zip(query) {
            let e = a - b;
            d += e * e;
            if d >= best.1 {
                break;
            }
        }
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// One replaced tile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TileMatch {
    pub row: usize,
    pub col: usize,
    pub channel: usize,
    pub bank_index: usize,
    pub distance: f64,
}

/// Builds `z_sample`: every per-channel tile with at least one masked entry is
/// replaced by its bank nearest neighbour, everything else copies `z_tilde`.
/// Border tiles are snapped inward when `k` does not divide the image; where
/// they overlap, the later tile in row-major order wins.
pub fn substitute(z_tilde: &Tensor3, mask: &DefectMask, bank: &PatchBank) -> Result<(Tensor3, Vec<TileMatch>)> {
    z_tilde.same_shape(&mask.mask)?;
    let k = bank.k();
    if k > z_tilde.height() || k > z_tilde.width() {
        return Err(Error::config("k", "tile larger than the noise map"));
    }
    let rows = window_offsets(z_tilde.height(), k, k);
    let cols = window_offsets(z_tilde.width(), k, k);
    let mut tiles = Vec::new();
    for &r in &rows {
        for &c in &cols {
            for v in 0..z_tilde.channels() {
                let touched = (r..r + k).any(|i| (c..c + k).any(|j| mask.is_masked(i, j, v)));
                if touched {
                    tiles.push((r, c, v));
                }
            }
        }
    }
    let matches: Vec<TileMatch> = tiles
        .par_iter()
        .map(|&(row, col, channel)| {
            let (bank_index, distance) = nearest_patch(bank, &z_tilde.tile(row, col, channel, k))?;
            Ok(TileMatch {
                row,
                col,
                channel,
                bank_index,
                distance,
            })
        })
        .collect::<Result<_>>()?;
    let mut z_sample = z_tilde.clone();
    for m in &matches {
        z_sample.set_tile(m.row, m.col, m.channel, k, bank.patch(m.bank_index));
    }
    Ok((z_sample, matches))
}

/// `z* = (1 − M) ⊙ z̃ + M ⊙ z_sample`.
pub fn blend(z_tilde: &Tensor3, mask: &Tensor3, z_sample: &Tensor3) -> Result<Tensor3> {
    z_tilde.same_shape(mask)?;
    z_tilde.same_shape(z_sample)?;
    let data = z_tilde
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .zip(z_sample.as_slice())
        .map(|((a, m), b)| (1.0 - m) * a + m * b)
        .collect();
    Tensor3::from_vec(z_tilde.shape(), data)
}

#[derive(Clone, Debug)]
pub struct RectifyReport {
    pub z_star: Tensor3,
    pub z_sample: Tensor3,
    pub tiles_replaced: usize,
    /// Mean Euclidean distance from each replaced tile to its match.
    pub mean_nn_distance: f64,
    pub matches: Vec<TileMatch>,
}

/// Substitution followed by the masked blend.
pub fn rectify(z_tilde: &Tensor3, mask: &DefectMask, bank: &PatchBank) -> Result<RectifyReport> {
    let (z_sample, matches) = substitute(z_tilde, mask, bank)?;
    let z_star = blend(z_tilde, &mask.mask, &z_sample)?;
    let mean_nn_distance = if matches.is_empty() {
        0.0
    } else {
        matches.iter().map(|m| m.distance.sqrt()).sum::<f64>() / matches.len() as f64
    };
    Ok(RectifyReport {
        z_star,
        z_sample,
        tiles_replaced: matches.len(),
        mean_nn_distance,
        matches,
    })
}
