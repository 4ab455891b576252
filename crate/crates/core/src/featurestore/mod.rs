//! On-disk feature and response sets.
//!
//! A feature set is a directory holding `manifest.json` plus one binary
//! matrix per layer under `layers/<layer>.bin`. A response store holds one
//! directory per subject, `subject_<id>/`, with a `regions.json` sidecar and
//! one `<region>.bin` per region. Every `.bin` file is a [`FeatureMatrix`]
//! block: a 16-byte header (`NENC`, version, rows, cols as little-endian
//! u32) followed by row-major little-endian f32 values.

mod matrix;
mod projection;
mod response;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use matrix::{FeatureMatrix, FORMAT_VERSION, HEADER_LEN, MAGIC};
pub use projection::{
    apply_projection, make_projection, ProjectionSpec, SparseProjection, DEFAULT_MAX_OUT_DIM,
};
pub use response::{
    read_response_set, read_response_store, write_response_set, RegionEntry, RegionResponses,
    RegionTable, ResponseSet,
};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LAYER_DIR: &str = "layers";
pub const DTYPE_F32: &str = "float32";

/// Whether layer files hold one row per video or one row per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StorageLayout {
    #[default]
    Averaged,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    /// Feature dimension as produced by the source network.
    pub raw_dim: usize,
    /// Stored dimension; differs from `raw_dim` after projection.
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub model_name: String,
    pub dtype: String,
    #[serde(default)]
    pub layout: StorageLayout,
    pub num_videos: usize,
    /// Stimulus ordering shared with response sets.
    pub video_ids: Vec<String>,
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_counts: Option<Vec<usize>>,
    /// Projection applied to every layer, seeded per layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionRecord>,
    #[serde(default)]
    pub notes: String,
}

/// Provenance of a projected set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub base_seed: u64,
    pub specs: Vec<ProjectionSpec>,
}

impl FeatureManifest {
    pub fn new(model_name: impl Into<String>, video_ids: Vec<String>) -> Self {
        Self {
            model_name: model_name.into(),
            dtype: DTYPE_F32.into(),
            layout: StorageLayout::Averaged,
            num_videos: video_ids.len(),
            video_ids,
            layers: Vec::new(),
            frame_counts: None,
            projection: None,
            notes: String::new(),
        }
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Number of stored rows per layer file.
    pub fn stored_rows(&self) -> usize {
        match (&self.layout, &self.frame_counts) {
            (StorageLayout::Raw, Some(fc)) => fc.iter().sum(),
            _ => self.num_videos,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dtype != DTYPE_F32 {
            return Err(Error::Manifest(format!("unsupported dtype `{}`", self.dtype)));
        }
        if self.num_videos == 0 {
            return Err(Error::Manifest("num_videos must be positive".into()));
        }
        if self.video_ids.len() != self.num_videos {
            return Err(Error::Manifest(format!(
                "{} video ids listed for {} videos",
                self.video_ids.len(),
                self.num_videos
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.video_ids.iter().find(|v| !seen.insert(v.as_str())) {
            return Err(Error::Manifest(format!("duplicate video id `{dup}`")));
        }
        if self.layers.is_empty() {
            return Err(Error::Manifest("no layers listed".into()));
        }
        let mut names = HashSet::new();
        for layer in &self.layers {
            validate_name(&layer.name, "layer")?;
            if !names.insert(layer.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate layer name `{}`", layer.name)));
            }
            if layer.raw_dim == 0 || layer.dim == 0 {
                return Err(Error::Manifest(format!(
                    "layer `{}` has zero dimension",
                    layer.name
                )));
            }
        }
        match self.layout {
            StorageLayout::Raw => {
                let fc = self.frame_counts.as_ref().ok_or_else(|| {
                    Error::Manifest("raw layout requires frame_counts".into())
                })?;
                if fc.len() != self.num_videos || fc.contains(&0) {
                    return Err(Error::Manifest(
                        "frame_counts must list a positive count per video".into(),
                    ));
                }
            }
            StorageLayout::Averaged => {
                if let Some(fc) = &self.frame_counts {
                    if fc.len() != self.num_videos {
                        return Err(Error::Manifest(
                            "frame_counts length disagrees with num_videos".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Names become file names, so path separators and dot-names are rejected.
pub(crate) fn validate_name(name: &str, what: &str) -> Result<()> {
    if name.is_empty()
        || name == "."
        || name == ".."
        || name.contains(['/', '\\', '\0'])
    {
        return Err(Error::Manifest(format!("invalid {what} name `{name}`")));
    }
    Ok(())
}

/// Per-video, per-layer features (temporal averaging already applied).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub manifest: FeatureManifest,
    pub layers: Vec<FeatureMatrix>,
}

impl FeatureSet {
    /// Builds an averaged set, deriving the layer table from the matrices.
    pub fn new(
        model_name: impl Into<String>,
        video_ids: Vec<String>,
        layers: Vec<(String, FeatureMatrix)>,
    ) -> Result<Self> {
        let mut manifest = FeatureManifest::new(model_name, video_ids);
        let mut mats = Vec::with_capacity(layers.len());
        for (name, m) in layers {
            manifest.layers.push(LayerEntry {
                name,
                raw_dim: m.cols(),
                dim: m.cols(),
            });
            mats.push(m);
        }
        let set = Self {
            manifest,
            layers: mats,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        if self.manifest.layout != StorageLayout::Averaged {
            return Err(Error::Manifest("in-memory feature sets are averaged".into()));
        }
        if self.layers.len() != self.manifest.layers.len() {
            return Err(Error::Manifest("layer count disagrees with manifest".into()));
        }
        for (entry, m) in self.manifest.layers.iter().zip(&self.layers) {
            if m.shape() != (self.manifest.num_videos, entry.dim) {
                return Err(Error::Manifest(format!(
                    "layer `{}` is {:?}, manifest declares {} x {}",
                    entry.name,
                    m.shape(),
                    self.manifest.num_videos,
                    entry.dim
                )));
            }
        }
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Option<&FeatureMatrix> {
        self.manifest.layer_index(name).map(|i| &self.layers[i])
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.manifest.layers.iter().map(|l| l.name.as_str())
    }

    pub fn num_videos(&self) -> usize {
        self.manifest.num_videos
    }

    /// Projects every layer. Each layer gets its own seed derived from
    /// `base_seed` and the layer name, so identically named layers of two
    /// sets share a projection.
    pub fn project(&self, base_seed: u64, out_dim: Option<usize>, density: Option<f64>) -> Result<Self> {
        if self.manifest.projection.is_some() {
            return Err(Error::InvalidInput(format!(
                "feature set `{}` is already projected",
                self.manifest.model_name
            )));
        }
        let mut manifest = self.manifest.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut specs = Vec::with_capacity(self.layers.len());
        for (entry, m) in manifest.layers.iter_mut().zip(&self.layers) {
            let target = out_dim
                .unwrap_or_else(|| ProjectionSpec::default_out_dim(entry.dim))
                .min(entry.dim);
            let mut spec = make_projection(layer_seed(base_seed, &entry.name), entry.dim, target)?;
            if let Some(s) = density {
                spec = spec.with_density(s)?;
            }
            layers.push(spec.matrix().apply(m, &entry.name)?);
            entry.dim = target;
            specs.push(spec);
        }
        manifest.projection = Some(ProjectionRecord { base_seed, specs });
        let set = Self { manifest, layers };
        set.validate()?;
        Ok(set)
    }
}

/// Seed of the projection for layer `name`.
pub fn layer_seed(base_seed: u64, name: &str) -> u64 {
    crate::split::derive_seed(base_seed, name)
}

/// Per-frame features before temporal averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatureSet {
    pub manifest: FeatureManifest,
    /// One `(total frames) x raw_dim` matrix per layer, videos contiguous.
    pub layers: Vec<FeatureMatrix>,
}

impl RawFeatureSet {
    pub fn write(&self, dir: &Path) -> Result<()> {
        if self.manifest.layout != StorageLayout::Raw {
            return Err(Error::Manifest("raw set must declare layout `raw`".into()));
        }
        write_set_files(dir, &self.manifest, &self.layers)
    }

    /// Averages every video's frames.
    pub fn average(&self) -> Result<FeatureSet> {
        self.manifest.validate()?;
        let counts = self.manifest.frame_counts.as_deref().unwrap_or_default();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (entry, raw) in self.manifest.layers.iter().zip(&self.layers) {
            layers.push(average_layer(raw, counts, &entry.name)?);
        }
        let mut manifest = self.manifest.clone();
        manifest.layout = StorageLayout::Averaged;
        let set = FeatureSet { manifest, layers };
        set.validate()?;
        Ok(set)
    }
}

/// Mean over frames (rows) of a `frames x dim` tensor.
pub fn temporal_average(raw: &FeatureMatrix) -> Result<Vec<f64>> {
    if raw.rows() == 0 {
        return Err(Error::EmptyInput("temporal average over zero frames".into()));
    }
    let mut acc = vec![0.0f64; raw.cols()];
    for r in 0..raw.rows() {
        for (a, &v) in acc.iter_mut().zip(raw.row(r)) {
            *a += v as f64;
        }
    }
    let n = raw.rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

fn average_layer(raw: &FeatureMatrix, counts: &[usize], layer: &str) -> Result<FeatureMatrix> {
    let total: usize = counts.iter().sum();
    if raw.rows() != total {
        return Err(Error::Manifest(format!(
            "layer `{layer}` holds {} frames, frame_counts sum to {total}",
            raw.rows()
        )));
    }
    let mut data = Vec::with_capacity(counts.len() * raw.cols());
    let mut start = 0;
    for &c in counts {
        let idx: Vec<usize> = (start..start + c).collect();
        let mean = temporal_average(&raw.select_rows(&idx))?;
        data.extend(mean.into_iter().map(|v| v as f32));
        start += c;
    }
    FeatureMatrix::new(counts.len(), raw.cols(), data)
}

fn layer_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(LAYER_DIR).join(format!("{name}.bin"))
}

fn write_set_files(dir: &Path, manifest: &FeatureManifest, layers: &[FeatureMatrix]) -> Result<()> {
    manifest.validate()?;
    if layers.len() != manifest.layers.len() {
        return Err(Error::Manifest("layer count disagrees with manifest".into()));
    }
    let rows = manifest.stored_rows();
    for (entry, m) in manifest.layers.iter().zip(layers) {
        let cols = match manifest.layout {
            StorageLayout::Averaged => entry.dim,
            StorageLayout::Raw => entry.raw_dim,
        };
        if m.shape() != (rows, cols) {
            return Err(Error::Manifest(format!(
                "layer `{}` is {:?}, manifest requires {rows} x {cols}",
                entry.name,
                m.shape()
            )));
        }
    }
    let layer_dir = dir.join(LAYER_DIR);
    fs::create_dir_all(&layer_dir).map_err(|e| Error::io(&layer_dir, e))?;
    for (entry, m) in manifest.layers.iter().zip(layers) {
        m.write(&layer_path(dir, &entry.name))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn write_feature_set(set: &FeatureSet, dir: &Path) -> Result<()> {
    set.validate()?;
    write_set_files(dir, &set.manifest, &set.layers)
}

pub fn read_manifest(dir: &Path) -> Result<FeatureManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: FeatureManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Reads a set, averaging raw layers at ingest.
pub fn read_feature_set(dir: &Path) -> Result<FeatureSet> {
    let manifest = read_manifest(dir)?;
    let rows = manifest.stored_rows();
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let path = layer_path(dir, &entry.name);
        let m = FeatureMatrix::read(&path)?;
        let cols = match manifest.layout {
            StorageLayout::Averaged => entry.dim,
            StorageLayout::Raw => entry.raw_dim,
        };
        if m.shape() != (rows, cols) {
            return Err(Error::format(
                &path,
                format!(
                    "length disagreement: manifest declares {rows} x {cols}, file holds {} x {}",
                    m.rows(),
                    m.cols()
                ),
            ));
        }
        layers.push(m);
    }
    match manifest.layout {
        StorageLayout::Averaged => {
            let set = FeatureSet { manifest, layers };
            set.validate()?;
            Ok(set)
        }
        StorageLayout::Raw => RawFeatureSet { manifest, layers }.average(),
    }
}

/// Fails unless `a` and `b` list the same videos in the same order.
pub fn check_video_ids(a: &[String], b: &[String], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "{what}: {} vs {} videos",
            a.len(),
            b.len()
        )));
    }
    if let Some(i) = a.iter().zip(b).position(|(x, y)| x != y) {
        return Err(Error::InvalidInput(format!(
            "{what}: video id mismatch at position {i} (`{}` vs `{}`)",
            a[i], b[i]
        )));
    }
    Ok(())
}
