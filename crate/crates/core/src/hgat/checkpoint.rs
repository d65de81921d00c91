//! Parameter checkpoints.
//!
//! ```text
//! magic        4   b"CDCK"
//! version      u16 (= 1)
//! meta_hash    32  SHA-256 of the metadata JSON
//! meta_len     u32
//! meta_json    meta_len bytes
//! tensors      u32
//! per tensor:  name_len u16, name, ndims u8, dims u32 × ndims, values f64 × Π dims
//! ```
//! Little-endian throughout. Loading fails unless every tensor name and
//! shape matches the current layout.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::params::{layout, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDCK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, params: &ModelParams, meta: &serde_json::Value) -> Result<()> {
    let json = serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u16::<LE>(CHECKPOINT_VERSION)?;
    w.write_all(&Sha256::digest(&json))?;
    w.write_u32::<LE>(json.len() as u32)?;
    w.write_all(&json)?;
    let l = layout();
    w.write_u32::<LE>(l.tensors.len() as u32)?;
    for t in &l.tensors {
        w.write_u16::<LE>(t.name.len() as u16)?;
        w.write_all(t.name.as_bytes())?;
        w.write_u8(t.shape.len() as u8)?;
        for &d in &t.shape {
            w.write_u32::<LE>(d as u32)?;
        }
        for &v in &params.data[t.range()] {
            w.write_f64::<LE>(v)?;
        }
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(ModelParams, serde_json::Value)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.read_u16::<LE>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: u32::from(version),
            expected: u32::from(CHECKPOINT_VERSION),
        });
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash).map_err(truncated)?;
    let len = r.read_u32::<LE>().map_err(truncated)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(truncated)?;
    if Sha256::digest(&json).as_slice() != hash {
        return Err(Error::Checkpoint("metadata hash mismatch".into()));
    }
    let meta: serde_json::Value = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let l = layout();
    let count = r.read_u32::<LE>().map_err(truncated)? as usize;
    if count != l.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} tensors, model has {}",
            l.tensors.len()
        )));
    }
    let mut params = ModelParams::zeros();
    for t in &l.tensors {
        let n = r.read_u16::<LE>().map_err(truncated)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8_lossy(&name);
        let ndims = r.read_u8().map_err(truncated)? as usize;
        let shape = (0..ndims)
            .map(|_| r.read_u32::<LE>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(truncated)?;
        if name != t.name || shape != t.shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch: checkpoint tensor {name} {shape:?}, model expects {} {:?}",
                t.name, t.shape
            )));
        }
        for v in &mut params.data[t.range()] {
            *v = r.read_f64::<LE>().map_err(truncated)?;
        }
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok((params, meta))
}

pub fn save(path: &Path, params: &ModelParams, meta: &serde_json::Value) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, meta)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelParams, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(&mut bytes.as_slice())
}
