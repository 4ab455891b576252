use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::split::permutation;

/// How test sets are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FoldScheme {
    /// `k` test sets that partition the videos.
    Partition,
    /// `k` pairwise disjoint test sets of `round(n * test_fraction)` videos
    /// each; they need not cover every video.
    Holdout { test_fraction: f64 },
}

impl Default for FoldScheme {
    fn default() -> Self {
        FoldScheme::Holdout { test_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub num_videos: usize,
    pub seed: u64,
    pub scheme: FoldScheme,
    pub folds: Vec<Fold>,
}

impl CvPlan {
    pub fn new(num_videos: usize, k: usize, scheme: FoldScheme, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
        }
        if num_videos < k {
            return Err(Error::InvalidInput(format!("{num_videos} videos cannot fill {k} folds")));
        }
        let perm = permutation(num_videos, seed);
        let sizes: Vec<usize> = match scheme {
            FoldScheme::Partition => (0..k).map(|f| num_videos / k + usize::from(f < num_videos % k)).collect(),
            FoldScheme::Holdout { test_fraction } => {
                if !(test_fraction > 0.0 && test_fraction < 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "test fraction {test_fraction} must lie in (0, 1)"
                    )));
                }
                let t = ((num_videos as f64) * test_fraction).round().max(1.0) as usize;
                if t * k > num_videos {
                    return Err(Error::InvalidInput(format!(
                        "{k} disjoint test sets of {t} videos need more than {num_videos} videos"
                    )));
                }
                vec![t; k]
            }
        };
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for size in sizes {
            let mut test = perm[start..start + size].to_vec();
            test.sort_unstable();
            let mut in_test = vec![false; num_videos];
            test.iter().for_each(|&v| in_test[v] = true);
            let train = (0..num_videos).filter(|&v| !in_test[v]).collect();
            folds.push(Fold { train, test });
            start += size;
        }
        Ok(Self {
            num_videos,
            seed,
            scheme,
            folds,
        })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

/// Shuffled partition of `0..num_videos` into `k` covering, disjoint test
/// sets of size `num_videos / k` (plus one for the first `num_videos % k`).
pub fn make_folds(num_videos: usize, k: usize, seed: u64) -> Result<CvPlan> {
    CvPlan::new(num_videos, k, FoldScheme::Partition, seed)
}
