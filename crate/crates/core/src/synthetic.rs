//! Planted data generators for tests, benchmarks and dry runs.
//!
//! Every generator is a pure function of its seed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::featurestore::{FeatureMatrix, FeatureSet, ResponseSet};
use crate::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn video_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("video_{i:04}")).collect()
}

fn to_fm(m: &DMatrix<f64>) -> FeatureMatrix {
    FeatureMatrix::from_dmatrix(m).expect("generated values are finite")
}

/// Gaussian feature set with `layers` layers of `dim` features.
pub fn random_feature_set(model: &str, videos: usize, layers: usize, dim: usize, seed: u64) -> Result<FeatureSet> {
    let mut r = rng(seed);
    let mats = (0..layers)
        .map(|l| (format!("layer{l}"), to_fm(&gaussian(videos, dim, &mut r))))
        .collect();
    FeatureSet::new(model, video_ids(videos), mats)
}

/// Responses that are a fixed random linear map of one layer's features
/// (plus `noise` times unit Gaussian noise), for every listed region.
pub fn planted_responses(
    features: &FeatureSet,
    layer: usize,
    regions: &[(&str, usize)],
    subjects: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<ResponseSet>> {
    let mut r = rng(seed);
    let x = features.layers[layer].to_dmatrix();
    let n = x.nrows();
    let mut out = Vec::with_capacity(subjects);
    for s in 0..subjects {
        let mut mats = Vec::new();
        for &(name, voxels) in regions {
            let w = gaussian(x.ncols(), voxels, &mut r) / (x.ncols() as f64).sqrt();
            let y = &x * w + gaussian(n, voxels, &mut r) * noise;
            mats.push((name.to_string(), to_fm(&y)));
        }
        out.push(ResponseSet::new(format!("{:02}", s + 1), features.manifest.video_ids.clone(), mats)?);
    }
    Ok(out)
}

/// Responses independent of any features.
pub fn noise_responses(video_ids: &[String], regions: &[(&str, usize)], subjects: usize, seed: u64) -> Result<Vec<ResponseSet>> {
    let mut r = rng(seed);
    (0..subjects)
        .map(|s| {
            let mats = regions
                .iter()
                .map(|&(name, v)| (name.to_string(), to_fm(&gaussian(video_ids.len(), v, &mut r))))
                .collect();
            ResponseSet::new(format!("{:02}", s + 1), video_ids.to_vec(), mats)
        })
        .collect()
}

/// Multi-region responses with planted inter-region coupling.
///
/// Features drive a few latent factors. Every source region reads its own
/// latent factors with low noise, so it is predictable from features. The
/// target region is a fixed linear mix of the first two source regions
/// plus strong voxel noise; the remaining regions are distractors.
#[derive(Debug, Clone)]
pub struct CoupledGenerator {
    pub videos: usize,
    pub feature_dim: usize,
    pub voxels_per_region: usize,
    /// Number of regions besides the target (at least 2).
    pub sources: usize,
    pub latent_per_region: usize,
    pub source_noise: f64,
    pub target_noise: f64,
}

impl Default for CoupledGenerator {
    fn default() -> Self {
        Self {
            videos: 1000,
            feature_dim: 192,
            voxels_per_region: 100,
            sources: 4,
            latent_per_region: 3,
            source_noise: 0.3,
            target_noise: 2.0,
        }
    }
}

/// Output of [`CoupledGenerator::generate`].
#[derive(Debug, Clone)]
pub struct CoupledData {
    pub features: FeatureSet,
    pub responses: ResponseSet,
    pub target: String,
    /// Region names that the target is mixed from.
    pub planted_sources: [String; 2],
}

impl CoupledGenerator {
    pub fn region_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.sources).map(|i| format!("R{i}")).collect();
        names.push("T".into());
        names
    }

    pub fn generate(&self, seed: u64) -> Result<CoupledData> {
        let mut r = rng(seed);
        let n = self.videos;
        let x = gaussian(n, self.feature_dim, &mut r);
        let mut regions = Vec::new();
        let mut clean = Vec::new();
        for i in 0..self.sources {
            let g = gaussian(self.feature_dim, self.latent_per_region, &mut r) / (self.feature_dim as f64).sqrt();
            let z = &x * g;
            let load = gaussian(self.latent_per_region, self.voxels_per_region, &mut r)
                / (self.latent_per_region as f64).sqrt();
            let signal = &z * load;
            let y = &signal + gaussian(n, self.voxels_per_region, &mut r) * self.source_noise;
            regions.push((format!("R{i}"), to_fm(&y)));
            clean.push(signal);
        }
        let half = self.voxels_per_region;
        let ma = gaussian(half, self.voxels_per_region, &mut r) / (2.0 * half as f64).sqrt();
        let mb = gaussian(half, self.voxels_per_region, &mut r) / (2.0 * half as f64).sqrt();
        let t_signal = &clean[0] * ma + &clean[1] * mb;
        let t = t_signal + gaussian(n, self.voxels_per_region, &mut r) * self.target_noise;
        regions.push(("T".into(), to_fm(&t)));

        let ids = video_ids(n);
        let features = FeatureSet::new("coupled", ids.clone(), vec![("layer0".into(), to_fm(&x))])?;
        let responses = ResponseSet::new("01", ids, regions)?;
        Ok(CoupledData {
            features,
            responses,
            target: "T".into(),
            planted_sources: ["R0".into(), "R1".into()],
        })
    }
}
