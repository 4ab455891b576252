//! Cross-validated runs, family comparisons and their configuration.

mod bundle;
mod compare;
mod config;
mod folds;
mod run;

pub use bundle::{
    ConnectivityRecord, FitRecord, FoldSummary, FoldTuning, RefinementResult, ResultBundle, RunOutput,
};
pub use compare::{compare_families, model_scores, AxisComparison, ComparisonSpec, ComparisonTable, GroupSummary, PairTest};
pub use config::{ConnectivitySettings, Mode, ProjectionSettings, RunConfig, ValidationInput};
pub use folds::{make_folds, CvPlan, Fold, FoldScheme};
pub use run::{run, run_real, run_simulated, write_run};
