use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use crate::connectivity::{AttributionMatrix, ConnectivityModel, ConnectivityReport, RegionGain};
use crate::encoder::{EncoderModel, FitReport, GridCell};
use crate::error::{Error, Result};
use crate::metrics::{RegionAggregate, RegionScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_videos: usize,
    /// Training videos held back for early stopping.
    pub early_stopping_videos: usize,
    pub test_videos: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTuning {
    pub fold: usize,
    pub subject: String,
    pub beta1: f64,
    pub beta2: f64,
    pub cells: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub subject: String,
    pub fold: usize,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityRecord {
    pub subject: String,
    pub fold: usize,
    pub report: ConnectivityReport,
}

/// Scores after one refinement strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub strategy: String,
    pub scores: Vec<RegionScore>,
    pub aggregates: BTreeMap<String, RegionAggregate>,
    /// Change relative to the first-stage scores.
    pub gains: BTreeMap<String, RegionGain>,
    /// Averaged over folds and subjects; absent for strategies without
    /// learned models.
    pub attribution: Option<AttributionMatrix>,
    pub reports: Vec<ConnectivityRecord>,
}

/// Everything a run reports. Serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub mode: Mode,
    pub source_model: String,
    /// `responses` in real mode, the target model name in simulated mode.
    pub target: String,
    pub regions: Vec<String>,
    pub subjects: Vec<String>,
    pub config: RunConfig,
    pub folds: Vec<FoldSummary>,
    pub tuning: Vec<FoldTuning>,
    /// First-stage test scores per (fold, subject, region).
    pub scores: Vec<RegionScore>,
    pub aggregates: BTreeMap<String, RegionAggregate>,
    pub fits: Vec<FitRecord>,
    pub refinements: Vec<RefinementResult>,
    pub notes: Vec<String>,
}

impl ResultBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn refinement(&self, strategy: &str) -> Option<&RefinementResult> {
        self.refinements.iter().find(|r| r.strategy == strategy)
    }

    /// Mean first-stage score over regions, the per-model summary used for
    /// family comparisons.
    pub fn mean_score(&self) -> f64 {
        self.aggregates.values().map(|a| a.mean).sum::<f64>() / self.aggregates.len() as f64
    }
}

/// Bundle plus the fitted models.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub bundle: ResultBundle,
    /// `(subject, fold, model)` in task order.
    pub encoders: Vec<(String, usize, EncoderModel)>,
    /// `(strategy, subject, fold, model)` in task order.
    pub connectivity: Vec<(String, String, usize, ConnectivityModel)>,
}
