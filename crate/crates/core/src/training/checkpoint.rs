//! Checkpoint container: a binary blob of named float64 matrices plus a JSON
//! sidecar carrying the step and the configuration digest. Loading verifies
//! the digest, so a checkpoint can never be silently applied to a model with
//! a different architecture.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"VCCK";
const VERSION: u32 = 1;

/// Canonical configuration digest: hex SHA-256 of the serialized JSON.
pub fn config_hash<C: Serialize>(cfg: &C) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    format!("{:x}", h.finalize())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Sidecar<C> {
    step: u64,
    config: C,
    config_hash: String,
}

pub struct CheckpointData<C> {
    pub step: u64,
    pub config: C,
    pub tensors: BTreeMap<String, Array2<f64>>,
}

fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

/// Write `<base>.vcck` and `<base>.json` atomically (write + rename).
pub fn save_checkpoint<C: Serialize>(
    base: &Path,
    step: u64,
    config: &C,
    tensors: &[(String, &Array2<f64>)],
) -> Result<PathBuf> {
    let blob_path = base.with_extension("vcck");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(tensor.ncols() as u64).to_le_bytes());
        for &v in tensor.iter() {
            if !v.is_finite() {
                return Err(Error::Training(format!(
                    "refusing to checkpoint non-finite value in {name}"
                )));
            }
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&blob_path, &buf)?;

    let sidecar = Sidecar {
        step,
        config,
        config_hash: config_hash(config),
    };
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&sidecar_path(&blob_path), &json)?;
    Ok(blob_path)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().unwrap_or_default().to_string_lossy()
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load a checkpoint written by `save_checkpoint`, verifying the sidecar's
/// configuration digest.
pub fn load_checkpoint<C: Serialize + DeserializeOwned>(
    blob_path: &Path,
) -> Result<CheckpointData<C>> {
    let side_path = sidecar_path(blob_path);
    let side_bytes = std::fs::read(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: Sidecar<C> = serde_json::from_slice(&side_bytes)
        .map_err(|e| Error::Format(format!("checkpoint sidecar: {e}")))?;
    let expect = config_hash(&sidecar.config);
    if sidecar.config_hash != expect {
        return Err(Error::Format(format!(
            "checkpoint config hash {} does not match its config (expected {expect})",
            sidecar.config_hash
        )));
    }

    let mut f = std::fs::File::open(blob_path).map_err(|e| Error::io(blob_path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(blob_path, e))?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(Error::Format("truncated checkpoint blob".into()));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    if take(&mut at, 4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut at, name_len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint tensor name is not UTF-8".into()))?;
        let rows = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("checkpoint tensor too large".into()))?;
        let payload = take(&mut at, n * 8)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Format(format!("checkpoint tensor {name}: {e}")))?;
        tensors.insert(name, arr);
    }
    if at != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok(CheckpointData {
        step: sidecar.step,
        config: sidecar.config,
        tensors,
    })
}
