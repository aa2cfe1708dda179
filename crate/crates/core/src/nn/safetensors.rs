//! Reader and writer for the safetensors container: an 8-byte little-endian
//! header length, a JSON header mapping tensor names to dtype, shape and
//! byte offsets, then the raw little-endian tensor data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

fn bad(path: &Path, message: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.to_owned(),
        message: message.into(),
    }
}

/// Loads every tensor as `f64`. Supports F64, F32, F16 and BF16 payloads.
pub fn read(path: &Path) -> Result<BTreeMap<String, ArrayD<f64>>, ModelError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| ModelError::Io {
            path: path.to_owned(),
            source,
        })?;
    decode(path, &bytes)
}

fn decode(path: &Path, bytes: &[u8]) -> Result<BTreeMap<String, ArrayD<f64>>, ModelError> {
    if bytes.len() < 8 {
        return Err(bad(path, "file shorter than the header length prefix"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let data_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad(path, "header length exceeds file size"))?;
    let header: BTreeMap<String, serde_json::Value> =
        serde_json::from_slice(&bytes[8..data_start]).map_err(|e| bad(path, format!("header: {e}")))?;
    let data = &bytes[data_start..];

    let mut out = BTreeMap::new();
    for (name, value) in header {
        if name == "__metadata__" {
            continue;
        }
        let info: TensorInfo =
            serde_json::from_value(value).map_err(|e| bad(path, format!("{name}: {e}")))?;
        let [start, end] = info.data_offsets;
        if start > end || end > data.len() {
            return Err(bad(path, format!("{name}: offsets out of bounds")));
        }
        let raw = &data[start..end];
        let count: usize = info.shape.iter().product();
        let width = match info.dtype.as_str() {
            "F64" => 8,
            "F32" => 4,
            "F16" | "BF16" => 2,
            other => return Err(bad(path, format!("{name}: unsupported dtype {other}"))),
        };
        if raw.len() != count * width {
            return Err(bad(path, format!("{name}: {} bytes for {count} {} values", raw.len(), info.dtype)));
        }
        let values: Vec<f64> = match info.dtype.as_str() {
            "F64" => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            "F32" => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            "F16" => raw
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            _ => raw
                .chunks_exact(2)
                .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
        };
        let array = ArrayD::from_shape_vec(IxDyn(&info.shape), values)
            .map_err(|e| bad(path, format!("{name}: {e}")))?;
        out.insert(name, array);
    }
    Ok(out)
}

/// Writes tensors in name order. A tensor is stored as F32 when every value
/// survives the round trip through `f32` bit-exactly, otherwise as F64.
pub fn write<'a, I>(path: &Path, tensors: I) -> Result<(), ModelError>
where
    I: IntoIterator<Item = (&'a str, &'a ArrayD<f64>)>,
{
    let sorted: BTreeMap<&str, &ArrayD<f64>> = tensors.into_iter().collect();
    let mut header = BTreeMap::new();
    let mut payload: Vec<u8> = Vec::new();
    for (name, array) in &sorted {
        let narrow = array.iter().all(|&v| (v as f32) as f64 == v || v.is_nan());
        let start = payload.len();
        if narrow {
            for &v in array.iter() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        } else {
            for &v in array.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        header.insert(
            name.to_string(),
            serde_json::to_value(TensorInfo {
                dtype: if narrow { "F32" } else { "F64" }.into(),
                shape: array.shape().to_vec(),
                data_offsets: [start, payload.len()],
            })
            .expect("tensor info serializes"),
        );
    }
    let mut header_bytes = serde_json::to_vec(&header).expect("header serializes");
    while header_bytes.len() % 8 != 0 {
        header_bytes.push(b' ');
    }
    let io = |source| ModelError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&(header_bytes.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header_bytes).map_err(io)?;
    w.write_all(&payload).map_err(io)?;
    w.flush().map_err(io)
}
