//! Checkpoint layout: magic `"FSCK1\n"`, little-endian `u64` header length,
//! a JSON header naming every parameter, then all parameter values as
//! little-endian `f64` in store order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::write_atomic;
use crate::diffcore::{Matrix, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"FSCK1\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// SHA-256 of the run manifest that produced the checkpoint.
    pub manifest_hash: String,
    pub epoch: usize,
    pub params: Vec<ParamEntry>,
}

pub fn encode_checkpoint(store: &ParamStore, manifest_hash: &str, epoch: usize) -> Vec<u8> {
    let header = CheckpointHeader {
        manifest_hash: manifest_hash.to_string(),
        epoch,
        params: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("serializable header");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore, manifest_hash: &str, epoch: usize) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(store, manifest_hash, epoch))
}

fn split(bytes: &[u8]) -> std::result::Result<(CheckpointHeader, &[u8]), String> {
    let m = CHECKPOINT_MAGIC.len();
    if bytes.len() < m + 8 || &bytes[..m] != CHECKPOINT_MAGIC {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let len = u64::from_le_bytes(bytes[m..m + 8].try_into().unwrap()) as usize;
    let body = &bytes[m + 8..];
    if body.len() < len {
        return Err("truncated checkpoint header".into());
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..len]).map_err(|e| format!("bad checkpoint header: {e}"))?;
    Ok((header, &body[len..]))
}

pub fn read_checkpoint_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    split(&bytes).map(|(h, _)| h).map_err(|m| Error::ingestion(path, m))
}

/// Loads values into `store`, whose names and shapes must match exactly.
pub fn load_checkpoint(path: impl AsRef<Path>, store: &mut ParamStore) -> Result<CheckpointHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, payload) = split(&bytes).map_err(|m| Error::ingestion(path, m))?;
    if header.params.len() != store.len() {
        return Err(Error::config(format!(
            "checkpoint has {} parameters, model has {}",
            header.params.len(),
            store.len()
        )));
    }
    let total: usize = header.params.iter().map(|p| p.rows * p.cols).sum();
    if payload.len() != 8 * total {
        return Err(Error::ingestion(path, "checkpoint payload length does not match its header"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for (entry, p) in header.params.iter().zip(store.iter_mut()) {
        if entry.name != p.name || entry.rows != p.value.rows() || entry.cols != p.value.cols() {
            return Err(Error::config(format!(
                "checkpoint parameter {} ({}x{}) does not match model parameter {} ({}x{})",
                entry.name,
                entry.rows,
                entry.cols,
                p.name,
                p.value.rows(),
                p.value.cols()
            )));
        }
        let data: Vec<f64> = values.by_ref().take(entry.rows * entry.cols).collect();
        p.value = Matrix::from_vec(entry.rows, entry.cols, data);
    }
    Ok(header)
}
