//! Parameter checkpoints.
//!
//! Layout: the 8-byte magic `WMCKPT01`, a little-endian `u64` header length,
//! a JSON header, then every array's values as little-endian `f64` in header
//! order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{NumericError, Result};
use crate::params::ParamStore;

const MAGIC: &[u8; 8] = b"WMCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    /// Seeds that produced these parameters, outermost first.
    #[serde(default)]
    pub seed_lineage: Vec<u64>,
    /// Free-form metadata (model variant, dimensions, training config).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn write_checkpoint(
    path: &Path,
    store: &ParamStore,
    seed_lineage: &[u64],
    metadata: serde_json::Value,
) -> Result<()> {
    let header = CheckpointHeader {
        dtype: "f64-le".into(),
        tensors: store
            .iter()
            .map(|(_, name, v)| TensorEntry {
                name: name.to_string(),
                shape: v.shape().to_vec(),
            })
            .collect(),
        seed_lineage: seed_lineage.to_vec(),
        metadata,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + header_bytes.len() + store.num_scalars() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for (_, _, v) in store.iter() {
        for x in v.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<(String, Array)>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(NumericError::Checkpoint("bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16 + hlen;
    if bytes.len() < body {
        return Err(NumericError::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body])?;
    if header.dtype != "f64-le" {
        return Err(NumericError::Checkpoint(format!("unsupported dtype {}", header.dtype)));
    }
    let total: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if bytes.len() != body + total * 8 {
        return Err(NumericError::Checkpoint(format!(
            "expected {} data bytes, found {}",
            total * 8,
            bytes.len() - body
        )));
    }
    let mut off = body;
    let mut arrays = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let data = bytes[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        off += n * 8;
        arrays.push((t.name.clone(), Array::new(t.shape.clone(), data)?));
    }
    Ok((header, arrays))
}

/// Copies checkpoint arrays into an existing store by name. Every store
/// parameter must be present with a matching shape.
pub fn load_into(store: &mut ParamStore, arrays: &[(String, Array)]) -> Result<()> {
    for (name, value) in arrays {
        if let Some(id) = store.id(name) {
            store.set(id, value.clone())?;
        }
    }
    let missing: Vec<_> = store
        .iter()
        .filter(|(_, n, _)| !arrays.iter().any(|(a, _)| a == n))
        .map(|(_, n, _)| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(NumericError::Checkpoint(format!("missing tensors: {missing:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = std::env::temp_dir().join(format!("ckpt-test-{}", std::process::id()));
        let path = dir.join("a.ckpt");
        let mut store = ParamStore::new();
        store.add("w", Array::from_rows(&[vec![1.0, -2.5], vec![3.0, 1e-300]]).unwrap()).unwrap();
        store.add("b", Array::row(&[0.125])).unwrap();
        write_checkpoint(&path, &store, &[7, 11], serde_json::json!({"variant": "cosmos"})).unwrap();
        let (h, arrays) = read_checkpoint(&path).unwrap();
        assert_eq!(h.seed_lineage, vec![7, 11]);
        assert_eq!(h.metadata["variant"], "cosmos");
        let mut other = ParamStore::new();
        other.add("w", Array::zeros(&[2, 2])).unwrap();
        other.add("b", Array::zeros(&[1, 1])).unwrap();
        load_into(&mut other, &arrays).unwrap();
        assert_eq!(other.get(other.id("w").unwrap()), store.get(store.id("w").unwrap()));
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let mut store = ParamStore::new();
        store.add("w", Array::zeros(&[1, 1])).unwrap();
        assert!(load_into(&mut store, &[]).is_err());
    }
}
