//! Parameter checkpoints.
//!
//! Binary file: `NENC`, version (u32), kind (u32), block count (u32), then
//! per block `rows` (u32), `cols` (u32) and row-major f32 values, all
//! little-endian. Model metadata lives in a JSON sidecar next to it
//! (`<file>.json`).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::featurestore::{FORMAT_VERSION, MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum CheckpointKind {
    Encoder = 1,
    Connectivity = 2,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn write_blocks<M: Serialize>(
    path: &Path,
    kind: CheckpointKind,
    blocks: &[&DMatrix<f64>],
    meta: &M,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(b.ncols() as u32).to_le_bytes());
        for r in 0..b.nrows() {
            for c in 0..b.ncols() {
                out.extend_from_slice(&(b[(r, c)] as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&side, e))
}

pub(crate) fn read_blocks<M: DeserializeOwned>(
    path: &Path,
    kind: CheckpointKind,
) -> Result<(Vec<DMatrix<f64>>, M)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::format(path, "truncated checkpoint"))
    };
    if bytes.len() < 16 || bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad checkpoint header"));
    }
    if word(4)? != FORMAT_VERSION {
        return Err(Error::format(path, "unsupported checkpoint version"));
    }
    if word(8)? != kind as u32 {
        return Err(Error::format(path, "checkpoint holds a different model kind"));
    }
    let count = word(12)? as usize;
    let mut pos = 16;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = word(pos)? as usize;
        let cols = word(pos + 4)? as usize;
        pos += 8;
        let end = pos + rows * cols * 4;
        let data = bytes
            .get(pos..end)
            .ok_or_else(|| Error::format(path, "truncated checkpoint block"))?;
        let vals = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        blocks.push(DMatrix::from_row_iterator(rows, cols, vals));
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last block"));
    }
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok((blocks, serde_json::from_str(&text)?))
}
