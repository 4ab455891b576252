//! Layer-weighted region encoder.
//!
//! Every layer `l` gets its own linear read-out `W_l x_l + b_l` onto the
//! region's voxels. The read-outs are mixed by learnable scalar layer
//! weights `omega`, and the whole model is trained on
//!
//! ```text
//! |Y - sum_l omega_l (X_l W_l^T + 1 b_l^T)|^2 + beta1 sum_l pen(W_l) + beta2 |omega|_1
//! ```
//!
//! where `pen` is the squared Frobenius norm by default, or the plain
//! Frobenius (group) norm.

mod checkpoint;
mod fit;
mod objective;
mod ridge;
mod tune;

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_encoder_checkpoint, write_encoder_checkpoint};
pub use fit::{fit, spectral_norm_sq, FitConfig, FitReport, StopReason};
pub use objective::{gradient, loss, Gradients, LossBreakdown, Penalty, WeightPenalty};
pub use ridge::ridge_oracle;
pub use tune::{select_best, tune, GridCell, HyperGrid, TuneResult};

use crate::error::{Error, Result};
use crate::linalg::add_scaled;

/// Training rows of one region: per-layer features and voxel responses.
///
/// `rows` records which videos the matrices hold, so that fits can check
/// that training and validation data never share a video.
#[derive(Debug, Clone)]
pub struct EncodingData {
    /// Shared between regions that use the same rows.
    pub layers: Arc<Vec<DMatrix<f64>>>,
    pub responses: DMatrix<f64>,
    pub rows: Vec<usize>,
}

impl EncodingData {
    pub fn new(layers: Vec<DMatrix<f64>>, responses: DMatrix<f64>, rows: Vec<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("encoder needs at least one layer".into()));
        }
        let n = responses.nrows();
        if rows.len() != n {
            return Err(Error::Dimension(format!(
                "{} row ids for {n} response rows",
                rows.len()
            )));
        }
        for (l, x) in layers.iter().enumerate() {
            if x.nrows() != n {
                return Err(Error::Dimension(format!(
                    "layer {l} has {} rows, responses have {n}",
                    x.nrows()
                )));
            }
        }
        check_finite_layers(&layers, "features")?;
        check_finite(&responses, "responses")?;
        Ok(Self {
            layers: Arc::new(layers),
            responses,
            rows,
        })
    }

    /// Same rows and features, different responses.
    pub fn with_responses(&self, responses: DMatrix<f64>) -> Result<Self> {
        if responses.nrows() != self.len() {
            return Err(Error::Dimension(format!(
                "{} response rows for {} feature rows",
                responses.nrows(),
                self.len()
            )));
        }
        check_finite(&responses, "responses")?;
        Ok(Self {
            layers: Arc::clone(&self.layers),
            responses,
            rows: self.rows.clone(),
        })
    }

    /// Selects positions (not video ids) `idx`.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            layers: Arc::new(self.layers.iter().map(|x| x.select_rows(idx)).collect()),
            responses: self.responses.select_rows(idx),
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxels(&self) -> usize {
        self.responses.ncols()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|x| x.ncols()).collect()
    }

    pub(crate) fn assert_disjoint(&self, other: &EncodingData) -> Result<()> {
        let mine: HashSet<usize> = self.rows.iter().copied().collect();
        if let Some(v) = other.rows.iter().find(|r| mine.contains(r)) {
            return Err(Error::InvalidInput(format!(
                "video {v} appears in both training and validation data"
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

pub(crate) fn check_finite_layers(layers: &[DMatrix<f64>], what: &str) -> Result<()> {
    layers.iter().try_for_each(|x| check_finite(x, what))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub beta1: f64,
    pub beta2: f64,
    pub epochs_run: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub region: String,
    /// Per layer, `voxels x features`.
    pub weights: Vec<DMatrix<f64>>,
    /// Per layer, one bias per voxel. `None` in no-bias mode.
    pub biases: Option<Vec<DVector<f64>>>,
    pub layer_weights: DVector<f64>,
    pub meta: TrainingMeta,
}

impl EncoderModel {
    /// Zero read-outs with every layer weight set to `omega0`.
    pub fn zeros(region: &str, voxels: usize, layer_dims: &[usize], use_bias: bool, omega0: f64) -> Self {
        Self {
            region: region.into(),
            weights: layer_dims.iter().map(|&c| DMatrix::zeros(voxels, c)).collect(),
            biases: use_bias.then(|| vec![DVector::zeros(voxels); layer_dims.len()]),
            layer_weights: DVector::from_element(layer_dims.len(), omega0),
            meta: TrainingMeta::default(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn voxels(&self) -> usize {
        self.weights.first().map_or(0, |w| w.nrows())
    }

    pub(crate) fn check_inputs(&self, layers: &[DMatrix<f64>]) -> Result<()> {
        if layers.len() != self.num_layers() {
            return Err(Error::Dimension(format!(
                "model has {} layers, got {}",
                self.num_layers(),
                layers.len()
            )));
        }
        for (l, (w, x)) in self.weights.iter().zip(layers).enumerate() {
            if w.ncols() != x.ncols() {
                return Err(Error::Dimension(format!(
                    "layer {l}: model expects {} features, got {}",
                    w.ncols(),
                    x.ncols()
                )));
            }
        }
        if layers.windows(2).any(|p| p[0].nrows() != p[1].nrows()) {
            return Err(Error::Dimension("layers disagree on the number of videos".into()));
        }
        Ok(())
    }

    /// Per-layer read-outs `X_l W_l^T + 1 b_l^T`, each `videos x voxels`.
    pub(crate) fn layer_outputs(&self, layers: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        self.weights
            .iter()
            .enumerate()
            .zip(layers)
            .map(|((l, w), x)| {
                let mut p = x * w.transpose();
                if let Some(b) = &self.biases {
                    for mut row in p.row_iter_mut() {
                        row += b[l].transpose();
                    }
                }
                p
            })
            .collect()
    }

    /// Predicted responses, `videos x voxels`.
    pub fn predict(&self, layers: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
        self.check_inputs(layers)?;
        check_finite_layers(layers, "features")?;
        Ok(self.combine(&self.layer_outputs(layers), layers[0].nrows()))
    }

    pub(crate) fn combine(&self, outputs: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(n, self.voxels());
        for (p, &w) in outputs.iter().zip(self.layer_weights.iter()) {
            add_scaled(&mut y, w, p);
        }
        y
    }

    /// Prediction for a single video given one feature vector per layer.
    pub fn predict_one(&self, features: &[DVector<f64>]) -> Result<DVector<f64>> {
        let rows: Vec<DMatrix<f64>> = features
            .iter()
            .map(|v| DMatrix::from_row_slice(1, v.len(), v.as_slice()))
            .collect();
        Ok(self.predict(&rows)?.row(0).transpose())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self
                .biases
                .iter()
                .flatten()
                .all(|b| b.iter().all(|v| v.is_finite()))
            && self.layer_weights.iter().all(|v| v.is_finite())
    }
}

/// Per-column z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<DVector<f64>>,
    scale: Vec<DVector<f64>>,
}

impl Standardizer {
    pub fn fit(layers: &[DMatrix<f64>]) -> Self {
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        for x in layers {
            let n = x.nrows().max(1) as f64;
            let m = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
            let s = DVector::from_iterator(
                x.ncols(),
                x.column_iter().zip(m.iter()).map(|(c, mu)| {
                    let sd = (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
                    if sd > 0.0 {
                        sd
                    } else {
                        1.0
                    }
                }),
            );
            mean.push(m);
            scale.push(s);
        }
        Self { mean, scale }
    }

    pub fn apply(&self, layers: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        layers
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| {
                let mut out = x.clone();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    col.add_scalar_mut(-m[j]);
                    col /= s[j];
                }
                out
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_predicts_zero() {
        let m = EncoderModel::zeros("V1", 3, &[4, 2], true, 0.5);
        let x = vec![DMatrix::from_element(5, 4, 1.0), DMatrix::from_element(5, 2, -2.0)];
        assert_eq!(m.predict(&x).unwrap(), DMatrix::zeros(5, 3));
    }

    #[test]
    fn identity_single_layer() {
        let mut m = EncoderModel::zeros("V1", 2, &[2], false, 1.0);
        m.weights[0] = DMatrix::identity(2, 2);
        let y = m.predict_one(&[DVector::from_vec(vec![3.0, 4.0])]).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn mismatched_inputs() {
        let m = EncoderModel::zeros("V1", 2, &[3, 3], true, 0.5);
        assert!(m.predict(&[DMatrix::zeros(1, 3)]).is_err());
        assert!(m.predict(&[DMatrix::zeros(1, 3), DMatrix::zeros(1, 4)]).is_err());
        let bad = vec![DMatrix::from_element(1, 3, f64::NAN), DMatrix::zeros(1, 3)];
        assert!(matches!(m.predict(&bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
        let z = Standardizer::fit(std::slice::from_ref(&x)).apply(std::slice::from_ref(&x));
        let c0 = z[0].column(0);
        assert!(c0.sum().abs() < 1e-12);
        assert!((c0.norm_squared() / 4.0 - 1.0).abs() < 1e-12);
        assert!(z[0].column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disjointness_check() {
        let d = |rows: Vec<usize>| {
            EncodingData::new(vec![DMatrix::zeros(rows.len(), 1)], DMatrix::zeros(rows.len(), 1), rows).unwrap()
        };
        assert!(d(vec![0, 1]).assert_disjoint(&d(vec![2, 3])).is_ok());
        assert!(d(vec![0, 1]).assert_disjoint(&d(vec![1, 3])).is_err());
    }
}
