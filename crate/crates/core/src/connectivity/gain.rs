use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aggregate, mean_std, RegionScore};

/// Per-region change in score from refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGain {
    pub region: String,
    /// Subject-averaged `refined - base` per fold.
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

impl RegionGain {
    /// Copy with every value multiplied by `factor` (e.g. 100 for display).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            region: self.region.clone(),
            per_fold: self.per_fold.iter().map(|v| v * factor).collect(),
            mean: self.mean * factor,
            std: self.std * factor,
        }
    }
}

/// Deltas between refined and base scores. Both inputs must cover the same
/// regions, subjects and folds.
pub fn connectivity_gain(base: &[RegionScore], refined: &[RegionScore]) -> Result<BTreeMap<String, RegionGain>> {
    let key = |s: &RegionScore| (s.region.clone(), s.subject.clone(), s.fold);
    let mut a: Vec<_> = base.iter().map(key).collect();
    let mut b: Vec<_> = refined.iter().map(key).collect();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::InvalidInput(
            "base and refined scores cover different regions, subjects or folds".into(),
        ));
    }
    let base = aggregate(base)?;
    let refined = aggregate(refined)?;
    let mut out = BTreeMap::new();
    for (region, b) in base {
        let r = &refined[&region];
        let per_fold: Vec<f64> = r.per_fold.iter().zip(&b.per_fold).map(|(x, y)| x - y).collect();
        let (mean, std) = mean_std(&per_fold);
        out.insert(
            region.clone(),
            RegionGain {
                region,
                per_fold,
                mean,
                std,
            },
        );
    }
    Ok(out)
}
