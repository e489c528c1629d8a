//! Lossy first-step compression: a two-level vector-quantized codec.
//!
//! Images are cut into square patches. Each patch is mapped linearly to a feature
//! vector and snapped to its nearest row of the bottom codebook. Bottom features are
//! average-pooled over `pool x pool` blocks of patches, mapped again, and snapped to
//! the top codebook. The resulting pair of index grids is the image's [`CodeGrid`].

mod codec;
mod format;
mod grid;

pub use codec::{
    train_codec, vq_loss_and_grads, vq_loss_terms, CodecConfig, CodecGeometry, CodecParams, CodecWeights, VqLoss,
    DEFAULT_BETA, DEFAULT_CODEBOOK_SIZE, DEFAULT_DIM, DEFAULT_LR,
};
pub use grid::{CodeGrid, Grid, UNCOMPRESSED_CODE_BYTES};

use rand::Rng;

use crate::error::{invalid, Result};
use crate::nn::squared_distance;

/// Index of the top (global) level in per-level arrays.
pub const TOP: usize = 0;
/// Index of the bottom (local) level in per-level arrays.
pub const BOTTOM: usize = 1;

/// `K x d` matrix of embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    vectors: Vec<f64>,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if size < 2 || dim == 0 {
            return invalid(format!("codebook needs K >= 2 and d >= 1, got K={size} d={dim}"));
        }
        if vectors.len() != size * dim {
            return invalid(format!("codebook expects {} entries, got {}", size * dim, vectors.len()));
        }
        Ok(Self { size, dim, vectors })
    }

    pub(crate) fn zeros(size: usize, dim: usize) -> Self {
        Self { size, dim, vectors: vec![0.0; size * dim] }
    }

    /// Rows drawn i.i.d. uniform in `[-1/K, 1/K]`.
    pub fn random<R: Rng>(size: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / size as f64;
        let vectors = (0..size * dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(size, dim, vectors)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    pub(crate) fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut [f64] {
        &mut self.vectors
    }

    /// Nearest row by Euclidean distance; ties go to the lowest index.
    pub fn quantize(&self, z: &[f64]) -> Result<(usize, &[f64])> {
        if z.len() != self.dim {
            return invalid(format!("vector of dimension {} quantized against d={}", z.len(), self.dim));
        }
        let k = self.nearest(z);
        Ok((k, self.row(k)))
    }

    pub(crate) fn nearest(&self, z: &[f64]) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, row) in self.vectors.chunks_exact(self.dim).enumerate() {
            let d = squared_distance(z, row);
            if d < best_dist {
                best = k;
                best_dist = d;
            }
        }
        best
    }
}

/// Free-function form of [`Codebook::quantize`].
pub fn quantize<'a>(z: &[f64], codebook: &'a Codebook) -> Result<(usize, &'a [f64])> {
    codebook.quantize(z)
}
