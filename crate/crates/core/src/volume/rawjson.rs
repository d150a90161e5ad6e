use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DType, Volume};
use crate::error::{Error, Result};

/// JSON sidecar of a rawjson volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawJsonHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: String,
    pub byte_order: String,
}

/// `(sidecar, payload)` paths for a rawjson base path. Either file of the
/// pair, or the bare stem, may be passed.
pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("raw"))
}

fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "u16" => Ok(DType::U16),
        "i16" => Ok(DType::I16),
        "f32" => Ok(DType::F32),
        other => Err(Error::UnsupportedDatatype(other.to_string())),
    }
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::U16 => "u16",
        DType::I16 => "i16",
        DType::F32 => "f32",
    }
}

pub(crate) fn decode_le(bytes: &[u8], dtype: DType) -> Vec<f32> {
    match dtype {
        DType::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        DType::I16 => bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    }
}

fn encode_le(data: &[f32], dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * dtype.size());
    for &x in data {
        match dtype {
            DType::U16 => out.extend_from_slice(&(x as u16).to_le_bytes()),
            DType::I16 => out.extend_from_slice(&(x as i16).to_le_bytes()),
            DType::F32 => out.extend_from_slice(&x.to_le_bytes()),
        }
    }
    out
}

pub fn read_rawjson(path: &Path) -> Result<Volume> {
    let (json_path, raw_path) = sidecar_paths(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: RawJsonHeader = serde_json::from_str(&text).map_err(|e| Error::InvalidHeader {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    if header.byte_order != "little" {
        return Err(Error::InvalidHeader {
            path: json_path,
            reason: format!("unsupported byte order `{}`", header.byte_order),
        });
    }
    let dtype = parse_dtype(&header.dtype)?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header.dims.iter().product::<usize>() * dtype.size();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    Volume::new(
        header.dims,
        header.spacing,
        header.origin,
        dtype,
        decode_le(&bytes, dtype),
    )
}

pub fn write_rawjson(v: &Volume, path: &Path) -> Result<()> {
    let (json_path, raw_path) = sidecar_paths(path);
    let header = RawJsonHeader {
        dims: v.dims(),
        spacing: v.spacing(),
        origin: v.origin(),
        dtype: dtype_name(v.dtype()).to_string(),
        byte_order: "little".to_string(),
    };
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, encode_le(v.data(), v.dtype())).map_err(|e| Error::io(&raw_path, e))
}
