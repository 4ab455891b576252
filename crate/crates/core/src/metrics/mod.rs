//! Regression scores and statistics.

mod aggregate;
mod cka;
pub mod special;
mod welch;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate, RegionAggregate, ScoreKey};
pub use cka::linear_cka;
pub use welch::{stars, welch, welch_labeled, SignificanceResult, Stars};

use crate::error::{Error, Result};

/// Sample Pearson correlation. `Ok(None)` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "pearson on vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("pearson needs at least 2 samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pearson input".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region: String,
    pub subject: String,
    pub fold: usize,
    /// Mean Pearson r over valid voxels.
    pub mean_r: f64,
    pub valid_voxels: usize,
    /// Voxels skipped because prediction or response had zero variance.
    pub invalid_voxels: usize,
}

/// Mean per-voxel correlation over the columns of two `videos x voxels`
/// matrices.
pub fn region_score(pred: &DMatrix<f64>, gt: &DMatrix<f64>) -> Result<(f64, usize, usize)> {
    if pred.shape() != gt.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs response {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut sum = 0.0;
    let mut valid = 0;
    for c in 0..pred.ncols() {
        let p: Vec<f64> = pred.column(c).iter().copied().collect();
        let g: Vec<f64> = gt.column(c).iter().copied().collect();
        if let Some(r) = pearson(&p, &g)? {
            sum += r;
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(Error::Degenerate("every voxel has zero variance".into()));
    }
    Ok((sum / valid as f64, valid, pred.ncols() - valid))
}

/// Convenience wrapper producing a labelled [`RegionScore`].
pub fn score_region(
    region: &str,
    subject: &str,
    fold: usize,
    pred: &DMatrix<f64>,
    gt: &DMatrix<f64>,
) -> Result<RegionScore> {
    let (mean_r, valid_voxels, invalid_voxels) = region_score(pred, gt)?;
    Ok(RegionScore {
        region: region.into(),
        subject: subject.into(),
        fold,
        mean_r,
        valid_voxels,
        invalid_voxels,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
