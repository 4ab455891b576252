use std::collections::BTreeMap;

use super::train::{tune_connectivity, ConnectivityConfig, ConnectivityReport};
use super::{baseline_identity, baseline_random, ConnectivityModel, RegionActivations, RegionLayout, Variant};
use crate::error::{Error, Result};

/// Everything a strategy needs to build a refinement model for one target
/// region in one fold.
#[derive(Debug, Clone, Copy)]
pub struct RefinementTask<'a> {
    pub layout: &'a RegionLayout,
    pub target: &'a str,
    /// Measured responses of the training videos.
    pub train: &'a RegionActivations,
    /// Inputs used for early stopping and L2 selection.
    pub val_inputs: &'a RegionActivations,
    /// Measured responses of the validation videos.
    pub val_truth: &'a RegionActivations,
    pub config: &'a ConnectivityConfig,
    pub seed: u64,
}

/// Result of a strategy: `None` leaves the first-stage prediction as is.
pub type StrategyOutcome = Option<(ConnectivityModel, Option<ConnectivityReport>)>;

pub trait RefinementStrategy: Send + Sync {
    fn name(&self) -> &str;
    fn build(&self, task: &RefinementTask<'_>) -> Result<StrategyOutcome>;
}

struct NoRefinement;

impl RefinementStrategy for NoRefinement {
    fn name(&self) -> &str {
        "none"
    }

    fn build(&self, _: &RefinementTask<'_>) -> Result<StrategyOutcome> {
        Ok(None)
    }
}

struct Learned(Variant);

impl RefinementStrategy for Learned {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn build(&self, task: &RefinementTask<'_>) -> Result<StrategyOutcome> {
        let (model, report) = tune_connectivity(task, self.0)?;
        Ok(Some((model, Some(report))))
    }
}

struct RandomBaseline;

impl RefinementStrategy for RandomBaseline {
    fn name(&self) -> &str {
        "random"
    }

    fn build(&self, task: &RefinementTask<'_>) -> Result<StrategyOutcome> {
        let m = baseline_random(task.layout, task.target, task.config.hidden, task.seed)?;
        Ok(Some((m, None)))
    }
}

struct IdentityBaseline;

impl RefinementStrategy for IdentityBaseline {
    fn name(&self) -> &str {
        "identity"
    }

    fn build(&self, task: &RefinementTask<'_>) -> Result<StrategyOutcome> {
        Ok(Some((baseline_identity(task.layout, task.target, task.config.hidden)?, None)))
    }
}

/// Refinement strategies selectable by name.
pub struct StrategyRegistry {
    strategies: BTreeMap<String, Box<dyn RefinementStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            strategies: BTreeMap::new(),
        }
    }

    /// `none`, `intra`, `inter`, `full`, `random` and `identity`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(NoRefinement));
        for v in [Variant::Intra, Variant::Inter, Variant::Full] {
            r.register(Box::new(Learned(v)));
        }
        r.register(Box::new(RandomBaseline));
        r.register(Box::new(IdentityBaseline));
        r
    }

    /// Adds a strategy, replacing any with the same name.
    pub fn register(&mut self, strategy: Box<dyn RefinementStrategy>) {
        self.strategies.insert(strategy.name().to_string(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<&dyn RefinementStrategy> {
        self.strategies
            .get(name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownStrategy(name.into()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.strategies.keys().map(String::as_str)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}
