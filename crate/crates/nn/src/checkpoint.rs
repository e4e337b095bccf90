//! Single-file checkpoints.
//!
//! Layout: the magic `AOTCKPT1`, a little-endian `u64` header length, a JSON
//! header (config, element type, tensor names and shapes), then the raw
//! little-endian values of every tensor in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model::{Model, Param, TransformerConfig};
use crate::tensor::{Float, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AOTCKPT1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TransformerConfig,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes<F: Float>(model: &Model<F>) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config().clone(),
        dtype: F::NAME.to_string(),
        tensors: model
            .params()
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.tensor.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + model.param_count() * F::BYTES);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for &v in p.tensor.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn from_bytes<F: Float>(bytes: &[u8]) -> Result<Model<F>> {
    let fail = |m: &str| NnError::Format(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("missing checkpoint magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..).ok_or_else(|| fail("truncated header"))?;
    if header_len > body.len() {
        return Err(fail("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])?;
    if header.dtype != F::NAME {
        return Err(NnError::Format(format!("checkpoint holds {} values, requested {}", header.dtype, F::NAME)));
    }
    let mut data = &body[header_len..];
    let mut params = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let size = n * F::BYTES;
        if data.len() < size {
            return Err(NnError::Format(format!("tensor {} is truncated", entry.name)));
        }
        let values = data[..size].chunks_exact(F::BYTES).map(F::read_le).collect();
        data = &data[size..];
        params.push(Param { name: entry.name, tensor: Tensor::new(entry.shape, values)? });
    }
    if !data.is_empty() {
        return Err(fail("trailing bytes after the last tensor"));
    }
    Model::from_params(header.config, params)
}

pub fn save<F: Float>(model: &Model<F>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load<F: Float>(path: &Path) -> Result<Model<F>> {
    from_bytes(&std::fs::read(path)?)
}
