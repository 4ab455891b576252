use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::folds::FoldScheme;
use crate::connectivity::{ConnectivityConfig, StrategyRegistry};
use crate::encoder::{FitConfig, HyperGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Features to measured voxel responses.
    #[default]
    Real,
    /// Features to another network's block features.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionSettings {
    pub enabled: bool,
    /// Output dimension per layer; `None` means `min(dim, 4096)`.
    pub out_dim: Option<usize>,
    /// Sparsity parameter; `None` means `sqrt(dim)`.
    pub density: Option<f64>,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            out_dim: None,
            density: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValidationInput {
    /// First-stage predictions of the validation videos (the inference
    /// setting).
    #[default]
    Predictions,
    /// Measured responses of the validation videos.
    Responses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConnectivitySettings {
    /// Registry names of the refinement strategies to run.
    pub strategies: Vec<String>,
    /// Target regions to refine; empty means every region.
    pub targets: Vec<String>,
    pub model: ConnectivityConfig,
    /// Inputs used for connectivity early stopping and L2 selection.
    pub validation: ValidationInput,
}

impl Default for ConnectivitySettings {
    fn default() -> Self {
        Self {
            strategies: vec!["full".into()],
            targets: Vec::new(),
            model: ConnectivityConfig::default(),
            validation: ValidationInput::Predictions,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Source feature set directory.
    pub features: Option<PathBuf>,
    /// Response store root (real mode).
    pub responses: Option<PathBuf>,
    /// Target feature set directory (simulated mode).
    pub target_features: Option<PathBuf>,
    /// Regions (real) or target blocks (simulated); empty means all.
    pub regions: Vec<String>,
    /// Subjects to include; empty means all.
    pub subjects: Vec<String>,
    pub folds: usize,
    pub fold_scheme: FoldScheme,
    pub grid: HyperGrid,
    /// Tune per subject instead of once on the tuning subject.
    pub tune_per_subject: bool,
    /// Drop the tuning subject from the reported scores.
    pub exclude_tuning_subject: bool,
    /// Fraction of each fold's training videos used for early stopping.
    pub inner_holdout: f64,
    pub fit: FitConfig,
    /// Z-score every feature on each fold's training videos.
    pub standardize_features: bool,
    pub projection: ProjectionSettings,
    pub connectivity: Option<ConnectivitySettings>,
    pub seed: u64,
    /// Worker threads; 0 uses every available core. Does not affect results.
    pub parallelism: usize,
    pub output: Option<PathBuf>,
    /// Also write encoder and connectivity checkpoints.
    pub save_models: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Real,
            features: None,
            responses: None,
            target_features: None,
            regions: Vec::new(),
            subjects: Vec::new(),
            folds: 4,
            fold_scheme: FoldScheme::default(),
            grid: HyperGrid::default(),
            tune_per_subject: false,
            exclude_tuning_subject: false,
            inner_holdout: 0.1,
            fit: FitConfig::default(),
            standardize_features: false,
            projection: ProjectionSettings::default(),
            connectivity: None,
            seed: 0,
            parallelism: 0,
            output: None,
            save_models: false,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Checks settings that do not need the data.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.inner_holdout > 0.0 && self.inner_holdout < 1.0) {
            return Err(Error::InvalidInput(format!(
                "inner holdout fraction {} must lie in (0, 1)",
                self.inner_holdout
            )));
        }
        if let Some(c) = &self.connectivity {
            c.model.validate()?;
            if c.strategies.is_empty() {
                return Err(Error::InvalidInput("connectivity needs at least one strategy".into()));
            }
            let registry = StrategyRegistry::with_defaults();
            for s in &c.strategies {
                registry.get(s)?;
            }
        }
        Ok(())
    }

    /// Checks that the paths the mode needs are present and exist.
    pub fn check_paths(&self) -> Result<()> {
        let need = |p: &Option<PathBuf>, what: &str| -> Result<()> {
            match p {
                None => Err(Error::InvalidInput(format!("{what} path is required in {:?} mode", self.mode))),
                Some(p) if !p.exists() => Err(Error::InvalidInput(format!("{what} path {} does not exist", p.display()))),
                Some(_) => Ok(()),
            }
        };
        need(&self.features, "features")?;
        match self.mode {
            Mode::Real => need(&self.responses, "responses"),
            Mode::Simulated => need(&self.target_features, "target features"),
        }
    }

    /// Copy without settings that do not influence results.
    pub(crate) fn normalized(&self) -> Self {
        Self {
            parallelism: 0,
            output: None,
            ..self.clone()
        }
    }
}
