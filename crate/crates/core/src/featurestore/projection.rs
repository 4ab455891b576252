//! Very sparse random projection.
//!
//! Entries of the `in_dim x out_dim` matrix are drawn i.i.d. from
//! `{+sqrt(s), 0, -sqrt(s)}` with probabilities `{1/(2s), 1 - 1/s, 1/(2s)}`
//! and scaled by `1/sqrt(out_dim)`, so that `E[|x R|^2] = |x|^2`. The default
//! density parameter is `s = sqrt(in_dim)`.
//!
//! Nonzero positions are sampled by geometric skipping over the row-major
//! entry sequence, so generation cost scales with the number of nonzeros.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Upper bound on the default projected dimension.
pub const DEFAULT_MAX_OUT_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub seed: u64,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Density parameter `s`; a fraction `1/s` of entries is nonzero.
    pub density: f64,
}

impl ProjectionSpec {
    pub fn with_density(mut self, density: f64) -> Result<Self> {
        if !(density.is_finite() && density >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "projection density must be >= 1, got {density}"
            )));
        }
        self.density = density;
        Ok(self)
    }

    /// Default output dimension for a layer of `raw_dim` features.
    pub fn default_out_dim(raw_dim: usize) -> usize {
        raw_dim.min(DEFAULT_MAX_OUT_DIM)
    }

    pub fn matrix(&self) -> SparseProjection {
        SparseProjection::generate(*self)
    }
}

/// Builds a projection spec with the default density `sqrt(in_dim)`.
pub fn make_projection(seed: u64, in_dim: usize, out_dim: usize) -> Result<ProjectionSpec> {
    if out_dim == 0 || out_dim > in_dim {
        return Err(Error::Dimension(format!(
            "projection output dim {out_dim} must lie in 1..={in_dim}"
        )));
    }
    Ok(ProjectionSpec {
        seed,
        in_dim,
        out_dim,
        density: (in_dim as f64).sqrt().max(1.0),
    })
}

/// Materialized projection: for every input dimension, its nonzero output
/// columns and values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseProjection {
    spec: ProjectionSpec,
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseProjection {
    fn generate(spec: ProjectionSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let p = (1.0 / spec.density).min(1.0);
        let magnitude = spec.density.sqrt() / (spec.out_dim as f64).sqrt();
        let total = spec.in_dim as u64 * spec.out_dim as u64;
        let mut rows = vec![Vec::new(); spec.in_dim];

        // Position of the next candidate entry in row-major order.
        let mut pos: u64 = 0;
        loop {
            if p < 1.0 {
                let u: f64 = rng.random::<f64>();
                // Number of zeros before the next nonzero, Geometric(p).
                let gap = ((1.0 - u).ln() / (1.0 - p).ln()).floor();
                if !gap.is_finite() || gap >= (total - pos) as f64 {
                    break;
                }
                pos += gap as u64;
            }
            if pos >= total {
                break;
            }
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let i = (pos / spec.out_dim as u64) as usize;
            let j = (pos % spec.out_dim as u64) as u32;
            rows[i].push((j, sign * magnitude));
            pos += 1;
        }
        Self { spec, rows }
    }

    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Nonzeros of input dimension `i` as `(output column, value)`.
    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    /// Dense copy in double precision, `in_dim x out_dim`, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.in_dim * self.spec.out_dim];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out[i * self.spec.out_dim + j as usize] = v;
            }
        }
        out
    }

    /// Projects every row of `features`; accumulation is in f64.
    pub fn apply(&self, features: &FeatureMatrix, layer: &str) -> Result<FeatureMatrix> {
        if features.cols() != self.spec.in_dim {
            return Err(Error::Dimension(format!(
                "layer `{layer}`: projection expects {} input dims, got {}",
                self.spec.in_dim,
                features.cols()
            )));
        }
        let out_dim = self.spec.out_dim;
        let mut out = vec![0.0f32; features.rows() * out_dim];
        out.par_chunks_mut(out_dim.max(1))
            .enumerate()
            .for_each(|(r, dst)| {
                let mut acc = vec![0.0f64; out_dim];
                for (i, &x) in features.row(r).iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let x = x as f64;
                    for &(j, v) in &self.rows[i] {
                        acc[j as usize] += x * v;
                    }
                }
                for (d, a) in dst.iter_mut().zip(acc) {
                    *d = a as f32;
                }
            });
        FeatureMatrix::new(features.rows(), out_dim, out)
    }
}

/// Convenience wrapper that regenerates the matrix for `spec`.
pub fn apply_projection(
    spec: &ProjectionSpec,
    features: &FeatureMatrix,
    layer: &str,
) -> Result<FeatureMatrix> {
    spec.matrix().apply(features, layer)
}
