//! Voxelwise encoding of deep-network features with layer-weighted
//! regression and learnable inter/intra-region connectivity.

pub mod checkpoint;
pub mod connectivity;
pub mod encoder;
pub mod error;
pub mod featurestore;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod split;
pub mod synthetic;

mod linalg;

pub use error::{Error, Result};
