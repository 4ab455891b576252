use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{mean_std, RegionScore};
use crate::error::{Error, Result};

/// Key for grouping scores before aggregation.
pub type ScoreKey = String;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAggregate {
    pub region: String,
    /// Mean over folds of the subject-averaged score.
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub folds: usize,
    pub subjects: usize,
    /// Subject-averaged score per fold, in fold order.
    pub per_fold: Vec<f64>,
}

/// Averages over subjects within each fold, then reports mean and standard
/// deviation across folds, per region. Every region must have a complete
/// subject x fold grid.
pub fn aggregate(scores: &[RegionScore]) -> Result<BTreeMap<String, RegionAggregate>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to aggregate".into()));
    }
    // region -> fold -> subject -> score
    let mut grid: BTreeMap<&str, BTreeMap<usize, BTreeMap<&str, f64>>> = BTreeMap::new();
    for s in scores {
        let prev = grid
            .entry(&s.region)
            .or_default()
            .entry(s.fold)
            .or_default()
            .insert(&s.subject, s.mean_r);
        if prev.is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate score for region `{}`, subject `{}`, fold {}",
                s.region, s.subject, s.fold
            )));
        }
    }
    let mut out = BTreeMap::new();
    for (region, folds) in grid {
        let subjects: BTreeSet<&str> = folds.values().flat_map(|m| m.keys().copied()).collect();
        let mut per_fold = Vec::with_capacity(folds.len());
        for (fold, by_subject) in &folds {
            if by_subject.len() != subjects.len() {
                return Err(Error::InvalidInput(format!(
                    "region `{region}` fold {fold} has {} of {} subjects",
                    by_subject.len(),
                    subjects.len()
                )));
            }
            per_fold.push(by_subject.values().sum::<f64>() / by_subject.len() as f64);
        }
        let (mean, std) = mean_std(&per_fold);
        out.insert(
            region.to_string(),
            RegionAggregate {
                region: region.to_string(),
                mean,
                std,
                folds: per_fold.len(),
                subjects: subjects.len(),
                per_fold,
            },
        );
    }
    Ok(out)
}
