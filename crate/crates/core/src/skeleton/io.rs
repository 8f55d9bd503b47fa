//! `.skl` clip files and JSON-lines dataset manifests.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sequence::ActionSequence;

pub const SKL_MAGIC: &[u8; 4] = b"SKL1";
const SKL_HEADER_LEN: usize = 16;

/// Encodes a clip: magic, `T`, `V`, `C` as little-endian u32, then f32 LE payload in (t, v, c) order.
pub fn encode_skl(seq: &ActionSequence) -> Vec<u8> {
    let (t, v, c) = seq.shape();
    let mut buf = Vec::with_capacity(SKL_HEADER_LEN + 4 * seq.data().len());
    buf.extend_from_slice(SKL_MAGIC);
    for n in [t, v, c] {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for x in seq.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_skl(bytes: &[u8]) -> Result<ActionSequence> {
    if bytes.len() < SKL_HEADER_LEN || &bytes[..4] != SKL_MAGIC {
        return Err(Error::Format("missing SKL1 magic/header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (t, v, c) = (dim(0), dim(1), dim(2));
    let payload = &bytes[SKL_HEADER_LEN..];
    let expected = t
        .checked_mul(v)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::Corrupt(format!("header ({t}, {v}, {c}) overflows")))?;
    if !payload.len().is_multiple_of(4) || payload.len() / 4 != expected {
        return Err(Error::Corrupt(format!(
            "header ({t}, {v}, {c}) declares {expected} floats, payload holds {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ActionSequence::new(t, v, c, data)
}

pub fn save_skl(seq: &ActionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_skl(seq)).map_err(|e| Error::io(path, e))
}

pub fn load_skl(path: impl AsRef<Path>) -> Result<ActionSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_skl(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Full,
    Few,
    Unseen,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Clip path, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub label: u32,
    pub subject: Option<u32>,
    pub split: Split,
}

/// A list of labelled clips; one JSON object per line on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            entries,
            root: root.into(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            entries.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { entries, root })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    /// Checks labels are below `classes` and every path exists.
    pub fn validate(&self, classes: u32) -> Result<()> {
        for e in &self.entries {
            if e.label >= classes {
                return Err(Error::Argument(format!(
                    "{}: label {} outside [0, {classes})",
                    e.path.display(),
                    e.label
                )));
            }
            let p = self.resolve(e);
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "clip not found"),
                ));
            }
        }
        Ok(())
    }

    pub fn filter(&self, split: Split) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
            root: self.root.clone(),
        }
    }

    /// Number of classes implied by the largest label.
    pub fn class_count(&self) -> u32 {
        self.entries.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    /// Loads every clip, attaching label and subject.
    pub fn load_all(&self) -> Result<Vec<ActionSequence>> {
        self.entries
            .iter()
            .map(|e| {
                Ok(load_skl(self.resolve(e))?
                    .with_label(Some(e.label))
                    .with_subject(e.subject))
            })
            .collect()
    }
}
