//! Weight checkpoints.
//!
//! Layout: the 8-byte magic `SFNETCK1`, a little-endian `u64` header length,
//! a JSON header (network config, tensor table, free-form metadata), then
//! every tensor as little-endian `f64` in table order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, SegNet, Tensor};
use crate::error::{Error, Result};
use crate::media::ensure_parent;

const MAGIC: &[u8; 8] = b"SFNETCK1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// A loaded network with the metadata stored next to it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: SegNet,
    pub metadata: serde_json::Value,
}

pub fn save_checkpoint(net: &SegNet, metadata: &serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        config: net.config().clone(),
        tensors: net
            .param_names()
            .iter()
            .zip(net.params())
            .map(|(name, t)| {
                let (a, b, c, d) = t.dim();
                TensorEntry {
                    name: name.to_string(),
                    shape: [a, b, c, d],
                }
            })
            .collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let total: usize = net.params().iter().map(|t| t.len()).sum();
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * total);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in net.params() {
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    ensure_parent(path)?;
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Checkpoint(format!("{}: {reason}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a network checkpoint".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..body]).map_err(|e| bad(e.to_string()))?;
    let mut offset = body;
    let mut params = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let [a, b, c, d] = entry.shape;
        let n = a * b * c * d;
        let end = offset + 8 * n;
        if end > bytes.len() {
            return Err(bad(format!("truncated tensor {}", entry.name)));
        }
        let values: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Tensor::from_shape_vec((a, b, c, d), values).expect("length matches shape"));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    let net = SegNet::from_parameters(header.config, params)?;
    for (entry, name) in header.tensors.iter().zip(net.param_names()) {
        if entry.name != name {
            return Err(bad(format!("tensor {} found where {name} expected", entry.name)));
        }
    }
    Ok(Checkpoint {
        net,
        metadata: header.metadata,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SegNet> {
    read_checkpoint(path).map(|c| c.net)
}
