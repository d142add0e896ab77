//! Checkpoint container.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then
//! one `.vtf` block per tensor in header order. Each block carries a CRC32
//! in the header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vtf;
use crate::error::{Error, Result};
use crate::repr::{ParamStore, RepConfig, Representation};
use crate::tensor::PRECISION;

pub const FORMAT: &str = "triflow-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_len: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub rep_config: RepConfig,
    /// Echo of the fitting configuration, if the model was fitted.
    #[serde(default)]
    pub fit_config: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub rep: Representation,
    pub fit_config: Option<serde_json::Value>,
}

pub fn encode(rep: &Representation, fit_config: Option<serde_json::Value>) -> Result<Vec<u8>> {
    let mut blocks = Vec::with_capacity(rep.params().len());
    let mut tensors = Vec::with_capacity(rep.params().len());
    for (name, t) in rep.params().iter() {
        let block = vtf::encode(t);
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: format!("{PRECISION:?}").to_lowercase(),
            byte_len: block.len() as u64,
            crc32: crc32fast::hash(&block),
        });
        blocks.push(block);
    }
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        rep_config: rep.config().clone(),
        fit_config,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + blocks.iter().map(Vec::len).sum::<usize>());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for b in blocks {
        out.extend_from_slice(&b);
    }
    Ok(out)
}

fn truncated(what: &str) -> Error {
    Error::Format(format!("truncated checkpoint: {what}"))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let len_bytes = bytes.get(..8).ok_or_else(|| truncated("header length"))?;
    let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| truncated("header"))?;
    let json = bytes
        .get(8..8usize.checked_add(len).ok_or_else(|| truncated("header"))?)
        .ok_or_else(|| truncated("header"))?;

    // Check the version before interpreting the rest of the header.
    let raw: serde_json::Value = serde_json::from_slice(json)?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(Error::Format("not a checkpoint header".into()));
    }
    let found = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format("checkpoint header has no version".into()))?;
    if found != VERSION as u64 {
        return Err(Error::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw)?;

    let mut rest = &bytes[8 + len..];
    let mut params = ParamStore::default();
    for entry in &header.tensors {
        let n = usize::try_from(entry.byte_len).map_err(|_| truncated(&entry.name))?;
        if rest.len() < n {
            return Err(truncated(&entry.name));
        }
        let (block, tail) = rest.split_at(n);
        rest = tail;
        if crc32fast::hash(block) != entry.crc32 {
            return Err(Error::Checksum {
                name: entry.name.clone(),
            });
        }
        let mut b = block;
        let t = vtf::decode(&mut b)?;
        if !b.is_empty() || t.shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!("tensor `{}` does not match its header entry", entry.name)));
        }
        params.insert(entry.name.clone(), t);
    }
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", rest.len())));
    }
    Ok(Checkpoint {
        rep: Representation::from_parts(header.rep_config, params)?,
        fit_config: header.fit_config,
    })
}

pub fn save_checkpoint(
    rep: &Representation,
    fit_config: Option<serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(rep, fit_config)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
