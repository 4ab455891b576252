use serde::{Deserialize, Serialize};

use super::fit::{fit, FitConfig};
use super::objective::Penalty;
use super::EncodingData;
use crate::error::{Error, Result};
use crate::metrics::region_score;
use crate::split::{derive_seed, holdout, partition};

/// Candidate penalties searched by [`tune`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub folds: usize,
    /// Subject whose training rows are used; `None` means the first subject.
    pub tuning_subject: Option<String>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            beta1: vec![0.1, 1.0, 10.0],
            beta2: vec![1.0, 10.0, 100.0],
            folds: 2,
            tuning_subject: None,
        }
    }
}

impl HyperGrid {
    pub fn single(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1: vec![beta1],
            beta2: vec![beta2],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta1.is_empty() || self.beta2.is_empty() {
            return Err(Error::EmptyInput("hyperparameter grid has an empty axis".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidInput("tuning needs at least 2 folds".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.beta1
            .iter()
            .flat_map(|&b1| self.beta2.iter().map(move |&b2| (b1, b2)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub beta1: f64,
    pub beta2: f64,
    /// Mean held-out Pearson over folds and regions.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub beta1: f64,
    pub beta2: f64,
    pub cells: Vec<GridCell>,
}

/// Highest score wins; ties go to the larger `(beta1, beta2)` pair.
pub fn select_best(cells: &[GridCell]) -> Option<GridCell> {
    let key = |c: &GridCell| if c.score.is_nan() { f64::NEG_INFINITY } else { c.score };
    cells.iter().copied().reduce(|best, c| {
        let (kb, kc) = (key(&best), key(&c));
        let larger = (c.beta1, c.beta2) > (best.beta1, best.beta2);
        if kc > kb || (kc == kb && larger) {
            c
        } else {
            best
        }
    })
}

/// Grid search by k-fold cross-validation over `regions` (one dataset per
/// region, all holding the same training videos). Inside each fold a 10%
/// slice of the fitting rows drives early stopping.
pub fn tune(grid: &HyperGrid, regions: &[(String, EncodingData)], cfg: &FitConfig, seed: u64) -> Result<TuneResult> {
    grid.validate()?;
    let (_, first) = regions
        .first()
        .ok_or_else(|| Error::EmptyInput("no regions to tune on".into()))?;
    let n = first.len();
    if n < 2 * grid.folds {
        return Err(Error::InvalidInput(format!(
            "{n} training videos are too few for {}-fold tuning",
            grid.folds
        )));
    }
    let positions: Vec<usize> = (0..n).collect();
    let parts = partition(&positions, grid.folds, derive_seed(seed, "tune/partition"));

    // Per fold: (fit rows, early-stopping rows, held-out rows).
    let mut splits = Vec::with_capacity(parts.len());
    for (k, held) in parts.iter().enumerate() {
        let rest: Vec<usize> = positions.iter().copied().filter(|p| !held.contains(p)).collect();
        let (fit_rows, stop_rows) = holdout(&rest, 0.1, derive_seed(seed, &format!("tune/fold{k}")));
        splits.push((first.subset(&fit_rows), first.subset(&stop_rows), first.subset(held), fit_rows, stop_rows, held.clone()));
    }

    let mut cells = Vec::new();
    for (beta1, beta2) in grid.cells() {
        let mut total = 0.0;
        let mut count = 0usize;
        for (fit_x, stop_x, held_x, fit_rows, stop_rows, held) in &splits {
            for (name, data) in regions {
                let tr = fit_x.with_responses(data.responses.select_rows(fit_rows))?;
                let va = stop_x.with_responses(data.responses.select_rows(stop_rows))?;
                let (model, _) = fit(&tr, &va, Penalty::new(beta1, beta2), cfg, name)?;
                let pred = model.predict(&held_x.layers)?;
                let gt = data.responses.select_rows(held);
                // Constant predictions (everything shrunk away) score zero.
                total += region_score(&pred, &gt).map(|(r, _, _)| r).unwrap_or(0.0);
                count += 1;
            }
        }
        cells.push(GridCell {
            beta1,
            beta2,
            score: total / count as f64,
        });
    }
    let best = select_best(&cells).expect("grid is nonempty");
    Ok(TuneResult {
        beta1: best.beta1,
        beta2: best.beta2,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(b1: f64, b2: f64, s: f64) -> GridCell {
        GridCell { beta1: b1, beta2: b2, score: s }
    }

    #[test]
    fn ties_prefer_stronger_regularization() {
        let grid = HyperGrid::default();
        let cells: Vec<GridCell> = grid.cells().into_iter().map(|(a, b)| cell(a, b, 0.5)).collect();
        let best = select_best(&cells).unwrap();
        assert_eq!((best.beta1, best.beta2), (10.0, 100.0));
    }

    #[test]
    fn best_score_wins() {
        let cells = [cell(0.1, 1.0, 0.2), cell(1.0, 10.0, 0.7), cell(10.0, 100.0, 0.4)];
        let best = select_best(&cells).unwrap();
        assert_eq!((best.beta1, best.beta2), (1.0, 10.0));
        let with_nan = [cell(10.0, 100.0, f64::NAN), cell(0.1, 1.0, -0.3)];
        assert_eq!(select_best(&with_nan).unwrap().beta1, 0.1);
    }

    #[test]
    fn empty_grid_rejected() {
        let mut g = HyperGrid::default();
        g.beta2.clear();
        assert!(g.validate().is_err());
    }
}
