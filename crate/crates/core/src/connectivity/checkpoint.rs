use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Activation, ConnectivityModel, ConnectivityTrainingMeta, ModelKind, RegionLayout};
use crate::checkpoint::{read_blocks, write_blocks, CheckpointKind};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ConnectivityMeta {
    kind: ModelKind,
    target: String,
    layout: RegionLayout,
    active: Vec<bool>,
    activation: Activation,
    dropout: (f64, f64),
    training: Option<ConnectivityTrainingMeta>,
}

fn row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

/// Blocks: `A1`, `c1` (1 x hidden), `A2`, `c2` (1 x target voxels).
pub fn write_connectivity_checkpoint(model: &ConnectivityModel, path: &Path) -> Result<()> {
    let (c1, c2) = (row(&model.c1), row(&model.c2));
    let meta = ConnectivityMeta {
        kind: model.kind,
        target: model.target.clone(),
        layout: model.layout.clone(),
        active: model.active.clone(),
        activation: model.activation,
        dropout: model.dropout,
        training: model.training.clone(),
    };
    write_blocks(path, CheckpointKind::Connectivity, &[&model.a1, &c1, &model.a2, &c2], &meta)
}

pub fn read_connectivity_checkpoint(path: &Path) -> Result<ConnectivityModel> {
    let (blocks, meta): (Vec<DMatrix<f64>>, ConnectivityMeta) = read_blocks(path, CheckpointKind::Connectivity)?;
    let [a1, c1, a2, c2]: [DMatrix<f64>; 4] = blocks
        .try_into()
        .map_err(|_| Error::Manifest("connectivity checkpoint must hold 4 blocks".into()))?;
    let t = meta.layout.require(&meta.target)?;
    let consistent = a1.ncols() == meta.layout.total()
        && c1.ncols() == a1.nrows()
        && a2.ncols() == a1.nrows()
        && a2.nrows() == meta.layout.count(t)
        && c2.ncols() == a2.nrows()
        && meta.active.len() == meta.layout.len();
    if !consistent {
        return Err(Error::Manifest("inconsistent connectivity checkpoint shapes".into()));
    }
    Ok(ConnectivityModel {
        kind: meta.kind,
        target: meta.target,
        layout: meta.layout,
        active: meta.active,
        activation: meta.activation,
        c1: DVector::from_iterator(c1.ncols(), c1.iter().copied()),
        c2: DVector::from_iterator(c2.ncols(), c2.iter().copied()),
        a1,
        a2,
        dropout: meta.dropout,
        training: meta.training,
    })
}

#[cfg(test)]
mod tests {
    use super::super::baseline_random;
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let layout = RegionLayout::new(&[("A".into(), 3), ("B".into(), 2)]).unwrap();
        let m = baseline_random(&layout, "B", 4, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conn.bin");
        write_connectivity_checkpoint(&m, &path).unwrap();
        let back = read_connectivity_checkpoint(&path).unwrap();
        assert_eq!(back.layout, m.layout);
        assert_eq!(back.kind, m.kind);
        assert!((back.a1 - &m.a1).amax() < 1e-6);
        assert!((back.a2 - &m.a2).amax() < 1e-6);
        let enc = dir.path().join("enc.bin");
        std::fs::copy(&path, &enc).unwrap();
        std::fs::copy(crate::checkpoint::sidecar_path(&path), crate::checkpoint::sidecar_path(&enc)).unwrap();
        assert!(crate::encoder::read_encoder_checkpoint(&enc).is_err());
    }
}
