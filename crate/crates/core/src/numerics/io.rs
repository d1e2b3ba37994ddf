//! Binary tensor files.
//!
//! Layout: magic `MMST`, `u8` version (1), `u8` dtype (0 = f32, 1 = f64),
//! `u8` rank, `rank` little-endian `u32` extents, then the row-major
//! little-endian payload. Semantic metadata lives in a JSON sidecar next to
//! the tensor file (`<file>.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::scalar::{DType, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMST";
pub const VERSION: u8 = 1;

pub fn encode<T: Scalar>(tensor: &Tensor<T>) -> Vec<u8> {
    let dtype = T::DTYPE;
    let mut out = Vec::with_capacity(7 + 4 * tensor.rank() + dtype.size() * tensor.numel());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(tensor.rank() as u8);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
    out
}

/// Decodes a tensor, converting the stored element type to `T` if needed.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing MMST magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    let header = 7 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated header".into()));
    }
    let shape: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let numel: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != numel * dtype.size() {
        return Err(Error::Format(format!(
            "payload of {} bytes does not match shape {shape:?} ({dtype:?})",
            payload.len()
        )));
    }
    let data: Vec<T> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
            .collect(),
    };
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    let mut name = path.as_ref().as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<V: DeserializeOwned>(path: impl AsRef<Path>) -> Result<V> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
