//! Binary container for named f64 tensors plus a JSON header.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"EQGANCKP" | u32 version | u64 header_len | header JSON | f64 payload | sha256
//! ```
//!
//! The header lists each tensor's name, shape and offset (in values) into
//! the payload. The trailing digest covers every preceding byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EQGANCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

pub fn encode(meta: &serde_json::Value, tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut offset = 0;
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Shape(format!("tensor {} shape {:?} holds {} values", t.name, t.shape, t.data.len())));
        }
        entries.push(Entry { name: t.name.clone(), shape: t.shape.clone(), offset });
        offset += t.data.len();
    }
    let header = serde_json::to_vec(&Header { meta: meta.clone(), tensors: entries })?;
    let mut out = Vec::with_capacity(20 + header.len() + offset * 8 + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(serde_json::Value, Vec<NamedTensor>)> {
    let bad = |reason: &str| Error::Checkpoint { path: PathBuf::from(path), reason: reason.to_string() };
    if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic or truncated)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (file is corrupt or truncated)"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| bad("header overruns file"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end]).map_err(|e| bad(&format!("bad header: {e}")))?;
    let payload = &body[header_end..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let len: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| bad(&format!("tensor {} overruns payload", e.name)))?
            .to_vec();
        tensors.push(NamedTensor { name: e.name, shape: e.shape, data });
    }
    Ok((header.meta, tensors))
}

pub fn write(path: &Path, meta: &serde_json::Value, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode(meta, tensors)?;
    // write-then-rename so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(serde_json::Value, Vec<NamedTensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?;
    decode(&bytes, path)
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}
