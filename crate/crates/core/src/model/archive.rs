// SPDX-License-Identifier: MIT OR Apache-2.0

//! Portable tensor archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! [0..8)        u64 header length N
//! [8..8+N)      UTF-8 JSON: name -> {"dtype":"f32","shape":[..],"data_offsets":[begin,end]}
//!               plus "__metadata__": {string: string} carrying the model config
//! [8+N..)       raw f32 tensor bytes; offsets are relative to this section
//! ```
//!
//! The writer emits tensors sorted by name, back to back, with keys sorted,
//! so identical inputs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::weights::ModelWeights;
use crate::tensor::Tensor;

const METADATA_KEY: &str = "__metadata__";

pub type NamedTensors = BTreeMap<String, Tensor<f32>>;
pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

/// Serializes named `f32` tensors plus string metadata.
pub fn encode_tensors(tensors: &BTreeMap<String, Tensor<f32>>, metadata: &BTreeMap<String, String>) -> Vec<u8> {
    let mut header = serde_json::Map::new();
    header.insert(
        METADATA_KEY.to_string(),
        serde_json::to_value(metadata).expect("string map serializes"),
    );
    let mut offset = 0u64;
    for (name, t) in tensors {
        let len = (t.numel() * 4) as u64;
        let entry = Entry {
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            data_offsets: [offset, offset + len],
        };
        header.insert(name.clone(), serde_json::to_value(entry).expect("entry serializes"));
        offset += len;
    }
    let header = serde_json::to_vec(&serde_json::Value::Object(header)).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses archive bytes into named tensors and metadata. `origin` only
/// labels error messages.
pub fn decode_tensors(
    bytes: &[u8],
    origin: &Path,
) -> Result<(NamedTensors, Metadata)> {
    let fail = |message: String| Error::Archive {
        path: origin.to_path_buf(),
        message,
    };
    if bytes.len() < 8 {
        return Err(fail("truncated: missing header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let header_end = 8u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| fail(format!("truncated: header of {header_len} bytes exceeds file")))?
        as usize;
    let header: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| fail(format!("header is not a JSON object: {e}")))?;
    let data = &bytes[header_end..];

    let mut metadata = BTreeMap::new();
    let mut tensors = BTreeMap::new();
    for (name, value) in header {
        if name == METADATA_KEY {
            metadata = serde_json::from_value(value)
                .map_err(|e| fail(format!("`{METADATA_KEY}` must map strings to strings: {e}")))?;
            continue;
        }
        let entry: Entry =
            serde_json::from_value(value).map_err(|e| fail(format!("tensor `{name}`: malformed entry: {e}")))?;
        if entry.dtype != "f32" {
            return Err(fail(format!("tensor `{name}`: unsupported dtype `{}`", entry.dtype)));
        }
        let [begin, end] = entry.data_offsets;
        let numel: usize = entry.shape.iter().product();
        if end < begin || end - begin != (numel * 4) as u64 {
            return Err(fail(format!(
                "tensor `{name}`: offsets {begin}..{end} do not match shape {:?}",
                entry.shape
            )));
        }
        if end > data.len() as u64 {
            return Err(fail(format!(
                "truncated: tensor `{name}` ends at {end}, data section has {} bytes",
                data.len()
            )));
        }
        let values: Vec<f32> = data[begin as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fail(format!("tensor `{name}` holds non-finite values")));
        }
        tensors.insert(name, Tensor::new(entry.shape, values)?);
    }
    Ok((tensors, metadata))
}

pub fn write_archive(path: &Path, config: &ModelConfig, weights: &ModelWeights<f32>) -> Result<()> {
    let bytes = encode_tensors(&weights.to_named(), &config.to_metadata());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads and validates an archive against the config in its metadata.
pub fn load_archive(path: &Path) -> Result<(ModelConfig, ModelWeights<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (tensors, metadata) = decode_tensors(&bytes, path)?;
    let wrap = |e: Error| Error::Archive {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let config = ModelConfig::from_metadata(&metadata).map_err(wrap)?;
    let weights = ModelWeights::from_named(&config, tensors).map_err(wrap)?;
    Ok((config, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BTreeMap<String, Tensor<f32>> {
        let mut m = BTreeMap::new();
        m.insert("b".to_string(), Tensor::vector(vec![1.5, -2.0]));
        m.insert("a".to_string(), Tensor::matrix(2, 1, vec![0.25, 3.0]).unwrap());
        m
    }

    #[test]
    fn header_layout_is_little_endian_length_then_json() {
        let bytes = encode_tensors(&sample(), &BTreeMap::new());
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        assert_eq!(header["a"]["data_offsets"], serde_json::json!([0, 8]));
        assert_eq!(header["b"]["data_offsets"], serde_json::json!([8, 16]));
        assert_eq!(header["a"]["dtype"], "f32");
        assert_eq!(bytes.len(), 8 + n + 16);
        assert_eq!(&bytes[8 + n..8 + n + 4], &0.25f32.to_le_bytes());
    }

    #[test]
    fn truncated_data_is_rejected() {
        let mut bytes = encode_tensors(&sample(), &BTreeMap::new());
        bytes.truncate(bytes.len() - 3);
        let err = decode_tensors(&bytes, Path::new("x")).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(decode_tensors(&bytes[..5], Path::new("x")).is_err());
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut m = sample();
        m.insert("c".into(), Tensor::vector(vec![0.0]));
        let mut bytes = encode_tensors(&m, &BTreeMap::new());
        let len = bytes.len();
        bytes[len - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode_tensors(&bytes, Path::new("x")).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");
    }
}
