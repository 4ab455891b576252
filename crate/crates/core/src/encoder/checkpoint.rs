use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EncoderModel, TrainingMeta};
use crate::checkpoint::{read_blocks, write_blocks, CheckpointKind};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct EncoderMeta {
    region: String,
    layers: usize,
    use_bias: bool,
    training: TrainingMeta,
}

/// Blocks: per layer `W_l` then `b_l` (1 x voxels, omitted in no-bias
/// mode), then `omega` (1 x layers). Values are stored as f32.
pub fn write_encoder_checkpoint(model: &EncoderModel, path: &Path) -> Result<()> {
    let biases: Option<Vec<DMatrix<f64>>> = model
        .biases
        .as_ref()
        .map(|bs| bs.iter().map(|b| DMatrix::from_row_slice(1, b.len(), b.as_slice())).collect());
    let omega = DMatrix::from_row_slice(1, model.num_layers(), model.layer_weights.as_slice());
    let mut blocks = Vec::new();
    for (l, w) in model.weights.iter().enumerate() {
        blocks.push(w);
        if let Some(b) = &biases {
            blocks.push(&b[l]);
        }
    }
    blocks.push(&omega);
    let meta = EncoderMeta {
        region: model.region.clone(),
        layers: model.num_layers(),
        use_bias: model.biases.is_some(),
        training: model.meta.clone(),
    };
    write_blocks(path, CheckpointKind::Encoder, &blocks, &meta)
}

pub fn read_encoder_checkpoint(path: &Path) -> Result<EncoderModel> {
    let (blocks, meta): (Vec<DMatrix<f64>>, EncoderMeta) = read_blocks(path, CheckpointKind::Encoder)?;
    let per_layer = if meta.use_bias { 2 } else { 1 };
    if blocks.len() != meta.layers * per_layer + 1 {
        return Err(Error::Manifest(format!(
            "checkpoint has {} blocks, expected {}",
            blocks.len(),
            meta.layers * per_layer + 1
        )));
    }
    let mut it = blocks.into_iter();
    let mut weights = Vec::new();
    let mut biases = meta.use_bias.then(Vec::new);
    for _ in 0..meta.layers {
        weights.push(it.next().unwrap());
        if let Some(bs) = biases.as_mut() {
            let b = it.next().unwrap();
            bs.push(DVector::from_iterator(b.ncols(), b.iter().copied()));
        }
    }
    let omega = it.next().unwrap();
    if omega.ncols() != meta.layers || weights.windows(2).any(|w| w[0].nrows() != w[1].nrows()) {
        return Err(Error::Manifest("inconsistent encoder checkpoint shapes".into()));
    }
    Ok(EncoderModel {
        region: meta.region,
        weights,
        biases,
        layer_weights: DVector::from_iterator(meta.layers, omega.iter().copied()),
        meta: meta.training,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let mut m = EncoderModel::zeros("V2", 3, &[4, 2], true, 0.25);
        m.weights[0][(1, 2)] = 0.5;
        m.weights[1][(2, 1)] = -1.25;
        m.biases.as_mut().unwrap()[1][0] = 3.0;
        m.meta.epochs_run = 17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.bin");
        write_encoder_checkpoint(&m, &path).unwrap();
        assert_eq!(read_encoder_checkpoint(&path).unwrap(), m);

        let mut nb = EncoderModel::zeros("V2", 2, &[3], false, 1.0);
        nb.weights[0][(0, 0)] = 2.0;
        write_encoder_checkpoint(&nb, &path).unwrap();
        assert_eq!(read_encoder_checkpoint(&path).unwrap(), nb);
    }
}
