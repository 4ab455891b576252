use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_name, FeatureMatrix};
use crate::error::{Error, Result};

pub const REGIONS_FILE: &str = "regions.json";
const SUBJECT_PREFIX: &str = "subject_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub name: String,
    pub voxel_count: usize,
}

/// Contents of a subject's `regions.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTable {
    pub subject: String,
    pub video_ids: Vec<String>,
    pub regions: Vec<RegionEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionResponses {
    pub name: String,
    /// `num_videos x voxel_count`.
    pub data: FeatureMatrix,
}

/// One subject's voxel activations, one value per video per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSet {
    pub subject: String,
    pub video_ids: Vec<String>,
    pub regions: Vec<RegionResponses>,
}

impl ResponseSet {
    pub fn new(
        subject: impl Into<String>,
        video_ids: Vec<String>,
        regions: Vec<(String, FeatureMatrix)>,
    ) -> Result<Self> {
        let set = Self {
            subject: subject.into(),
            video_ids,
            regions: regions
                .into_iter()
                .map(|(name, data)| RegionResponses { name, data })
                .collect(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        validate_name(&self.subject, "subject")?;
        if self.regions.is_empty() {
            return Err(Error::Manifest(format!("subject `{}` has no regions", self.subject)));
        }
        let mut names = HashSet::new();
        for r in &self.regions {
            validate_name(&r.name, "region")?;
            if !names.insert(r.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate region name `{}`", r.name)));
            }
            if r.data.rows() != self.video_ids.len() {
                return Err(Error::Manifest(format!(
                    "region `{}` has {} rows for {} videos",
                    r.name,
                    r.data.rows(),
                    self.video_ids.len()
                )));
            }
            if r.data.cols() == 0 {
                return Err(Error::Manifest(format!("region `{}` has no voxels", r.name)));
            }
        }
        Ok(())
    }

    pub fn region(&self, name: &str) -> Option<&FeatureMatrix> {
        self.regions.iter().find(|r| r.name == name).map(|r| &r.data)
    }

    pub fn region_names(&self) -> impl Iterator<Item = &str> {
        self.regions.iter().map(|r| r.name.as_str())
    }

    pub fn table(&self) -> RegionTable {
        RegionTable {
            subject: self.subject.clone(),
            video_ids: self.video_ids.clone(),
            regions: self
                .regions
                .iter()
                .map(|r| RegionEntry {
                    name: r.name.clone(),
                    voxel_count: r.data.cols(),
                })
                .collect(),
        }
    }
}

/// Writes `<root>/subject_<id>/{regions.json, <region>.bin}`.
pub fn write_response_set(root: &Path, set: &ResponseSet) -> Result<()> {
    set.validate()?;
    let dir = root.join(format!("{SUBJECT_PREFIX}{}", set.subject));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for r in &set.regions {
        r.data.write(&dir.join(format!("{}.bin", r.name)))?;
    }
    let path = dir.join(REGIONS_FILE);
    let json = serde_json::to_string_pretty(&set.table())?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Reads a single `subject_<id>` directory.
pub fn read_response_set(dir: &Path) -> Result<ResponseSet> {
    let path = dir.join(REGIONS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let table: RegionTable = serde_json::from_str(&text)?;
    let mut regions = Vec::with_capacity(table.regions.len());
    for entry in &table.regions {
        validate_name(&entry.name, "region")?;
        let file = dir.join(format!("{}.bin", entry.name));
        let data = FeatureMatrix::read(&file)?;
        if data.shape() != (table.video_ids.len(), entry.voxel_count) {
            return Err(Error::format(
                &file,
                format!(
                    "length disagreement: regions.json declares {} x {}, file holds {} x {}",
                    table.video_ids.len(),
                    entry.voxel_count,
                    data.rows(),
                    data.cols()
                ),
            ));
        }
        regions.push(RegionResponses {
            name: entry.name.clone(),
            data,
        });
    }
    let set = ResponseSet {
        subject: table.subject,
        video_ids: table.video_ids,
        regions,
    };
    set.validate()?;
    Ok(set)
}

/// Reads every `subject_*` directory under `root`, sorted by directory name.
pub fn read_response_store(root: &Path) -> Result<Vec<ResponseSet>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with(SUBJECT_PREFIX) && entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no subject_* directories under {}",
            root.display()
        )));
    }
    dirs.iter().map(|d| read_response_set(d)).collect()
}
