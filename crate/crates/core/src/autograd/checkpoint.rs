//! Parameter files: one JSON header line, a newline, then little-endian `f32` payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    meta: serde_json::Value,
    entries: Vec<Entry>,
}

/// Parameters plus free-form metadata (model configuration, training state).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore<f32>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, p) in ck.params.iter() {
        entries.push(Entry {
            name: name.to_string(),
            shape: p.shape.clone(),
            offset,
            len: p.value.len(),
        });
        offset += p.value.len();
        for x in &p.value {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        meta: ck.meta.clone(),
        entries,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint header not terminated".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    let payload = &bytes[nl + 1..];
    if !payload.len().is_multiple_of(4) {
        return Err(Error::Corrupt(format!("payload of {} bytes", payload.len())));
    }
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let expected: usize = header.entries.iter().map(|e| e.len).sum();
    if floats.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload holds {} values, header describes {expected}",
            floats.len()
        )));
    }
    let mut params = ParamStore::new();
    for e in header.entries {
        if e.shape.iter().product::<usize>() != e.len || e.offset + e.len > floats.len() {
            return Err(Error::Corrupt(format!("entry {} out of range", e.name)));
        }
        let data = floats[e.offset..e.offset + e.len].to_vec();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corrupt(format!("non-finite value in {}", e.name)));
        }
        params
            .insert(&e.name, Tensor::new(&e.shape, data))
            .map_err(|_| Error::Corrupt(format!("duplicate entry {}", e.name)))?;
    }
    Ok(Checkpoint {
        meta: header.meta,
        params,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
