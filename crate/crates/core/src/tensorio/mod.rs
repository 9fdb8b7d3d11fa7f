//! On-disk tensor container and corpus manifests.
//!
//! The tensor format is deliberately minimal so every consumer, regardless of
//! language, can read it with a few dozen lines of code:
//!
//! ```text
//! magic   "VCTF"            4 bytes
//! version u32 LE            currently 1
//! dtype   u8                1 = float32 (the only dtype in v1)
//! ndim    u32 LE            1..=4
//! dims    u64 LE * ndim
//! payload f32 LE * product(dims), row-major
//! ```

pub mod manifest;
pub mod wav;

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayD, IxDyn};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"VCTF";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;
const MAX_NDIM: usize = 4;

/// Write a tensor, failing on non-finite values.
pub fn write_tensor(path: &Path, tensor: &ArrayD<f32>) -> Result<()> {
    let ndim = tensor.ndim();
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!(
            "tensor rank {ndim} outside supported range 1..=4"
        )));
    }
    if tensor.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "refusing to write non-finite tensor to {}",
            path.display()
        )));
    }
    let mut buf =
        Vec::with_capacity(4 + 4 + 1 + 4 + 8 * ndim + 4 * tensor.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&(ndim as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    // Row-major regardless of the in-memory layout.
    for &v in tensor.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &buf)
}

/// Write bytes via a temp file and rename, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("bin")
    ));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a tensor written by [`write_tensor`].
pub fn read_tensor(path: &Path) -> Result<ArrayD<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_tensor(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_tensor(bytes: &[u8]) -> Result<ArrayD<f32>> {
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Format("truncated header".into()));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = take(&mut off, 1)?[0];
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("dtype mismatch: code {dtype}")));
    }
    let ndim = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!("rank {ndim} outside 1..=4")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize);
    }
    let count: usize = dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::Format("dimension product overflows".into()))
    })?;
    let payload = &bytes[off..];
    if payload.len() != count * 4 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header claims {} elements ({} bytes)",
            payload.len(),
            count,
            count * 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|e| Error::Format(format!("shape rejected: {e}")))
}

/// Convenience: write an f64 matrix as a rank-2 float32 tensor.
pub fn write_matrix(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let cast = matrix.mapv(|v| v as f32).into_dyn();
    write_tensor(path, &cast)
}

/// Convenience: read a rank-2 tensor into an f64 matrix.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let t = read_tensor(path)?;
    if t.ndim() != 2 {
        return Err(Error::Shape(format!(
            "{}: expected rank-2 tensor, found rank {}",
            path.display(),
            t.ndim()
        )));
    }
    let shape = (t.shape()[0], t.shape()[1]);
    let data: Vec<f64> = t.iter().map(|&v| v as f64).collect();
    Ok(Array2::from_shape_vec(shape, data).expect("shape just validated"))
}
