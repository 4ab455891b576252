//! Second-stage refinement of one region's predicted voxels from the
//! voxels of other regions (and optionally its own).
//!
//! A model is trained on measured responses and applied to first-stage
//! encoder predictions. Activations carry a [`Provenance`] tag and every
//! entry point checks it.

mod attribution;
mod checkpoint;
mod gain;
mod strategy;
mod train;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::ResponseSet;

pub use attribution::{attribute, attribute_models, AttributionMatrix};
pub use checkpoint::{read_connectivity_checkpoint, write_connectivity_checkpoint};
pub use gain::{connectivity_gain, RegionGain};
pub use strategy::{RefinementStrategy, RefinementTask, StrategyOutcome, StrategyRegistry};
pub use train::{train_connectivity, tune_connectivity, ConnectivityConfig, ConnectivityReport};

/// Ordered regions and their offsets in the concatenated voxel vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionLayout {
    names: Vec<String>,
    counts: Vec<usize>,
    offsets: Vec<usize>,
}

impl RegionLayout {
    pub fn new(regions: &[(String, usize)]) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::EmptyInput("region layout has no regions".into()));
        }
        let mut names = Vec::with_capacity(regions.len());
        let mut counts = Vec::with_capacity(regions.len());
        let mut offsets = Vec::with_capacity(regions.len());
        let mut total = 0;
        for (name, count) in regions {
            if *count == 0 {
                return Err(Error::InvalidInput(format!("region `{name}` has no voxels")));
            }
            if names.contains(name) {
                return Err(Error::InvalidInput(format!("region `{name}` listed twice")));
            }
            names.push(name.clone());
            counts.push(*count);
            offsets.push(total);
            total += count;
        }
        Ok(Self { names, counts, offsets })
    }

    pub fn from_responses(set: &ResponseSet) -> Result<Self> {
        let regions: Vec<(String, usize)> = set.regions.iter().map(|r| (r.name.clone(), r.data.cols())).collect();
        Self::new(&regions)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self, region: usize) -> usize {
        self.counts[region]
    }

    pub fn offset(&self, region: usize) -> usize {
        self.offsets[region]
    }

    pub fn total(&self) -> usize {
        self.offsets.last().unwrap() + self.counts.last().unwrap()
    }

    pub(crate) fn require(&self, name: &str) -> Result<usize> {
        self.index(name)
            .ok_or_else(|| Error::InvalidInput(format!("region `{name}` is not in the layout")))
    }
}

/// Which input regions a learned model may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Only the target region.
    Intra,
    /// Every region except the target.
    Inter,
    /// Every region.
    Full,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Intra => "intra",
            Variant::Inter => "inter",
            Variant::Full => "full",
        }
    }

    /// Per-region activity flags for `target`.
    pub fn active_regions(self, layout: &RegionLayout, target: &str) -> Result<Vec<bool>> {
        let t = layout.require(target)?;
        if self == Variant::Inter && layout.len() < 2 {
            return Err(Error::InvalidInput(
                "inter-region variant needs at least two regions".into(),
            ));
        }
        Ok((0..layout.len())
            .map(|r| match self {
                Variant::Intra => r == t,
                Variant::Inter => r != t,
                Variant::Full => true,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

impl Activation {
    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
        }
    }

    pub(crate) fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => f64::from(u8::from(pre > 0.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "variant")]
pub enum ModelKind {
    Learned(Variant),
    /// Untrained Xavier-uniform weights.
    Random,
    /// Untrained all-ones first map.
    Identity,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Learned(v) => v.name(),
            ModelKind::Random => "random",
            ModelKind::Identity => "identity",
        }
    }
}

/// Where a block of voxel activations came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Stage1Prediction,
}

/// Per-region `videos x voxels` activations for a set of videos.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionActivations {
    pub provenance: Provenance,
    /// Video indices of the rows, used to check split integrity.
    pub videos: Vec<usize>,
    pub regions: BTreeMap<String, DMatrix<f64>>,
}

impl RegionActivations {
    pub fn new(provenance: Provenance, videos: Vec<usize>, regions: BTreeMap<String, DMatrix<f64>>) -> Result<Self> {
        for (name, m) in &regions {
            if m.nrows() != videos.len() {
                return Err(Error::Dimension(format!(
                    "region `{name}` has {} rows for {} videos",
                    m.nrows(),
                    videos.len()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("activations of region `{name}`")));
            }
        }
        Ok(Self {
            provenance,
            videos,
            regions,
        })
    }

    /// Measured responses of the listed videos (row positions in `set`).
    pub fn ground_truth(set: &ResponseSet, rows: &[usize]) -> Result<Self> {
        let regions = set
            .regions
            .iter()
            .map(|r| (r.name.clone(), r.data.select_rows(rows).to_dmatrix()))
            .collect();
        Self::new(Provenance::GroundTruth, rows.to_vec(), regions)
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub(crate) fn expect(&self, provenance: Provenance, what: &str) -> Result<()> {
        if self.provenance != provenance {
            return Err(Error::InvalidInput(format!(
                "{what} must be {provenance:?} activations, got {:?}",
                self.provenance
            )));
        }
        Ok(())
    }

    pub fn region(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.regions
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("no activations for region `{name}`")))
    }

    /// Concatenated `videos x total` input. Inactive regions may be absent
    /// and are filled with zeros.
    pub fn concat(&self, layout: &RegionLayout, active: &[bool]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.len(), layout.total());
        for (r, name) in layout.names().iter().enumerate() {
            if !active[r] {
                continue;
            }
            let m = self.region(name)?;
            if m.ncols() != layout.count(r) {
                return Err(Error::Dimension(format!(
                    "region `{name}` has {} voxels, layout expects {}",
                    m.ncols(),
                    layout.count(r)
                )));
            }
            out.columns_mut(layout.offset(r), layout.count(r)).copy_from(m);
        }
        Ok(out)
    }
}

pub(crate) fn assert_disjoint(a: &RegionActivations, b: &RegionActivations) -> Result<()> {
    let seen: std::collections::BTreeSet<usize> = a.videos.iter().copied().collect();
    match b.videos.iter().find(|v| seen.contains(v)) {
        Some(v) => Err(Error::InvalidInput(format!(
            "video {v} appears in both training and validation activations"
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityTrainingMeta {
    pub l2: f64,
    pub epochs_run: usize,
    pub selected_epoch: usize,
    pub best_val_loss: f64,
}

/// Two affine maps over the masked concatenation of all regions:
/// `out = A2 act(A1 x + c1) + c2`, with dropout before each map during
/// training.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityModel {
    pub kind: ModelKind,
    pub target: String,
    pub layout: RegionLayout,
    /// Per-region activity flags.
    pub active: Vec<bool>,
    pub activation: Activation,
    /// `hidden x total`; columns of inactive regions are zero.
    pub a1: DMatrix<f64>,
    pub c1: DVector<f64>,
    /// `target voxels x hidden`.
    pub a2: DMatrix<f64>,
    pub c2: DVector<f64>,
    pub dropout: (f64, f64),
    pub training: Option<ConnectivityTrainingMeta>,
}

impl ConnectivityModel {
    pub fn hidden(&self) -> usize {
        self.a1.nrows()
    }

    pub fn target_index(&self) -> usize {
        self.layout.index(&self.target).expect("target is validated on construction")
    }

    /// Per-slot input mask over the concatenated vector.
    pub fn slot_mask(&self) -> Vec<bool> {
        slot_mask(&self.layout, &self.active)
    }

    pub(crate) fn zero_inactive_columns(&mut self) {
        for (r, &on) in self.active.iter().enumerate() {
            if !on {
                self.a1
                    .columns_mut(self.layout.offset(r), self.layout.count(r))
                    .fill(0.0);
            }
        }
    }

    pub(crate) fn mask_input(&self, x: &mut DMatrix<f64>) {
        for (r, &on) in self.active.iter().enumerate() {
            if !on {
                x.columns_mut(self.layout.offset(r), self.layout.count(r)).fill(0.0);
            }
        }
    }

    /// Hidden pre-activations and the output for a `videos x total` input.
    pub(crate) fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut pre = x * self.a1.transpose();
        for mut row in pre.row_iter_mut() {
            row += self.c1.transpose();
        }
        let h = pre.map(|v| self.activation.apply(v));
        let mut out = h * self.a2.transpose();
        for mut row in out.row_iter_mut() {
            row += self.c2.transpose();
        }
        (pre, out)
    }

    /// Refines the target region from a concatenated input matrix. Masked
    /// slots are ignored.
    pub fn predict_concat(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.layout.total() {
            return Err(Error::Dimension(format!(
                "input has {} columns, layout has {}",
                x.ncols(),
                self.layout.total()
            )));
        }
        let mut x = x.clone();
        self.mask_input(&mut x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("connectivity input".into()));
        }
        Ok(self.forward(&x).1)
    }

    /// Gradient of the summed outputs with respect to each input slot.
    pub fn input_gradient(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.layout.total() {
            return Err(Error::Dimension(format!(
                "input has {} columns, layout has {}",
                x.ncols(),
                self.layout.total()
            )));
        }
        let mut xm = x.clone();
        self.mask_input(&mut xm);
        let (pre, _) = self.forward(&xm);
        let upstream = DMatrix::from_element(x.nrows(), self.a2.nrows(), 1.0);
        let mut dh = upstream * &self.a2;
        dh.zip_apply(&pre, |g, p| *g *= self.activation.derivative(p));
        let mut dx = dh * &self.a1;
        self.mask_input(&mut dx);
        Ok(dx)
    }

    /// Effective linear map `A2 A1`, `target voxels x total`.
    pub fn effective_map(&self) -> DMatrix<f64> {
        &self.a2 * &self.a1
    }

    pub fn is_finite(&self) -> bool {
        [&self.a1, &self.a2].iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.c1.iter().chain(self.c2.iter()).all(|v| v.is_finite())
    }
}

pub(crate) fn slot_mask(layout: &RegionLayout, active: &[bool]) -> Vec<bool> {
    let mut mask = vec![false; layout.total()];
    for (r, &on) in active.iter().enumerate() {
        let o = layout.offset(r);
        mask[o..o + layout.count(r)].fill(on);
    }
    mask
}

/// Refined target-region prediction from first-stage predictions.
pub fn infer_connectivity(model: &ConnectivityModel, predictions: &RegionActivations) -> Result<DMatrix<f64>> {
    predictions.expect(Provenance::Stage1Prediction, "connectivity inference input")?;
    let x = predictions.concat(&model.layout, &model.active)?;
    model.predict_concat(&x)
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..=a))
}

pub(crate) fn initial_model(
    kind: ModelKind,
    layout: &RegionLayout,
    target: &str,
    active: Vec<bool>,
    hidden: usize,
    activation: Activation,
    seed: u64,
) -> Result<ConnectivityModel> {
    let t = layout.require(target)?;
    if hidden == 0 {
        return Err(Error::InvalidInput("hidden width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = layout.total();
    let out = layout.count(t);
    let mut model = ConnectivityModel {
        kind,
        target: target.into(),
        layout: layout.clone(),
        active,
        activation,
        a1: xavier(hidden, total, &mut rng),
        c1: DVector::zeros(hidden),
        a2: xavier(out, hidden, &mut rng),
        c2: DVector::zeros(out),
        dropout: (0.0, 0.0),
        training: None,
    };
    model.zero_inactive_columns();
    Ok(model)
}

/// Untrained model reading every region, with Xavier-uniform weights
/// `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`, and zero biases.
pub fn baseline_random(layout: &RegionLayout, target: &str, hidden: usize, seed: u64) -> Result<ConnectivityModel> {
    let active = vec![true; layout.len()];
    initial_model(ModelKind::Random, layout, target, active, hidden, Activation::Identity, seed)
}

/// Untrained model reading every region whose first map is all ones.
///
/// The second map is `1/hidden` so that each output equals the sum of the
/// active input slots.
pub fn baseline_identity(layout: &RegionLayout, target: &str, hidden: usize) -> Result<ConnectivityModel> {
    let mut m = baseline_random(layout, target, hidden, 0)?;
    m.kind = ModelKind::Identity;
    m.a1.fill(1.0);
    m.a2.fill(1.0 / hidden as f64);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn layout3() -> RegionLayout {
        RegionLayout::new(&[("A".into(), 2), ("B".into(), 3), ("C".into(), 2)]).unwrap()
    }

    #[test]
    fn layout_offsets() {
        let l = layout3();
        assert_eq!(l.total(), 7);
        assert_eq!((l.offset(0), l.offset(1), l.offset(2)), (0, 2, 5));
        assert!(RegionLayout::new(&[("A".into(), 0)]).is_err());
        assert!(RegionLayout::new(&[("A".into(), 1), ("A".into(), 2)]).is_err());
        assert!(RegionLayout::new(&[]).is_err());
    }

    #[test]
    fn variant_masks() {
        let l = layout3();
        assert_eq!(Variant::Intra.active_regions(&l, "B").unwrap(), [false, true, false]);
        assert_eq!(Variant::Inter.active_regions(&l, "B").unwrap(), [true, false, true]);
        assert_eq!(Variant::Full.active_regions(&l, "B").unwrap(), [true, true, true]);
        assert!(Variant::Full.active_regions(&l, "Z").is_err());
        let one = RegionLayout::new(&[("A".into(), 2)]).unwrap();
        assert!(Variant::Inter.active_regions(&one, "A").is_err());
    }

    #[test]
    fn identity_baseline_sums_active_slots() {
        let l = layout3();
        let m = baseline_identity(&l, "C", 4).unwrap();
        let c = 0.75;
        let x = DMatrix::from_element(1, l.total(), c);
        let y = m.predict_concat(&x).unwrap();
        assert_eq!(y.ncols(), 2);
        for v in y.iter() {
            assert!((v - c * l.total() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn random_baseline_is_seeded_and_bounded() {
        let l = layout3();
        let a = baseline_random(&l, "A", 5, 9).unwrap();
        assert_eq!(a, baseline_random(&l, "A", 5, 9).unwrap());
        assert_ne!(a, baseline_random(&l, "A", 5, 10).unwrap());
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.a1.iter().all(|v| v.abs() <= bound));
        assert!(a.c1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn provenance_is_checked() {
        let l = layout3();
        let m = baseline_identity(&l, "A", 2).unwrap();
        let regions = l
            .names()
            .iter()
            .enumerate()
            .map(|(r, n)| (n.clone(), DMatrix::zeros(1, l.count(r))))
            .collect();
        let gt = RegionActivations::new(Provenance::GroundTruth, vec![0], regions).unwrap();
        assert!(infer_connectivity(&m, &gt).is_err());
        let pred = RegionActivations { provenance: Provenance::Stage1Prediction, ..gt };
        assert!(infer_connectivity(&m, &pred).is_ok());
    }

    #[test]
    fn missing_active_region_is_an_error() {
        let l = layout3();
        let mut m = baseline_identity(&l, "A", 2).unwrap();
        let regions = BTreeMap::from([("A".to_string(), DMatrix::zeros(1, 2))]);
        let pred = RegionActivations::new(Provenance::Stage1Prediction, vec![0], regions).unwrap();
        assert!(infer_connectivity(&m, &pred).is_err());
        m.active = vec![true, false, false];
        m.zero_inactive_columns();
        assert!(infer_connectivity(&m, &pred).is_ok());
    }
}
