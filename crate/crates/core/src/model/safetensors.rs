// SPDX-License-Identifier: Apache-2.0

//! Minimal safetensors container reader/writer.
//!
//! Layout: an 8-byte little-endian header length, a JSON header mapping each
//! tensor name to `{dtype, shape, data_offsets}`, then the raw little-endian
//! payload. F32, F16 and BF16 are read; half-precision values are widened to
//! f32. Writing always emits F32 with names in sorted order, so identical
//! inputs give identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// A dense f32 tensor of any rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

#[derive(Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

const MAX_HEADER: u64 = 100 * 1024 * 1024;

/// Reads every tensor from one safetensors file.
pub fn read(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mut file = File::open(path)?;
    let total = file.metadata()?.len();
    let mut len_buf = [0u8; 8];
    file.read_exact(&mut len_buf)
        .map_err(|_| Error::Format(format!("{}: shorter than a safetensors header", path.display())))?;
    let header_len = u64::from_le_bytes(len_buf);
    if header_len > MAX_HEADER || 8 + header_len > total {
        return Err(Error::Format(format!(
            "{}: header length {header_len} is implausible",
            path.display()
        )));
    }
    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header)?;
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&header)
        .map_err(|e| Error::Format(format!("{}: bad header json: {e}", path.display())))?;
    let data_start = 8 + header_len;
    let mut out = BTreeMap::new();
    for (name, value) in raw {
        if name == "__metadata__" {
            continue;
        }
        let entry: Entry = serde_json::from_value(value)
            .map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        let width = match entry.dtype.as_str() {
            "F32" => 4,
            "F16" | "BF16" => 2,
            other => {
                return Err(Error::Format(format!(
                    "tensor `{name}` has unsupported dtype {other}"
                )))
            }
        };
        let count: usize = entry.shape.iter().product();
        let [begin, end] = entry.data_offsets;
        if end < begin || end - begin != (count * width) as u64 || data_start + end > total {
            return Err(Error::Format(format!(
                "tensor `{name}` has inconsistent offsets {begin}..{end} for shape {:?}",
                entry.shape
            )));
        }
        file.seek(SeekFrom::Start(data_start + begin))?;
        let mut bytes = vec![0u8; (end - begin) as usize];
        file.read_exact(&mut bytes)?;
        let data: Vec<f32> = match entry.dtype.as_str() {
            "F32" => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            "F16" => bytes
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            _ => bytes
                .chunks_exact(2)
                .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
        };
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor `{name}` element {i}")));
        }
        out.insert(name, Tensor { shape: entry.shape, data });
    }
    Ok(out)
}

/// Reads a single file, or every `*.safetensors` file in a directory (sharded
/// checkpoints). Duplicate names across shards are rejected.
pub fn read_path(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    if !path.is_dir() {
        return read(path);
    }
    let mut shards: Vec<_> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "safetensors"))
        .collect();
    shards.sort();
    if shards.is_empty() {
        return Err(Error::Format(format!("{}: no .safetensors files", path.display())));
    }
    let mut all = BTreeMap::new();
    for shard in shards {
        for (name, t) in read(&shard)? {
            if all.insert(name.clone(), t).is_some() {
                return Err(Error::Format(format!("tensor `{name}` appears in two shards")));
            }
        }
    }
    Ok(all)
}

/// Writes tensors as F32, sorted by name.
pub fn write(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut header = serde_json::Map::new();
    let mut offset = 0u64;
    for (name, t) in tensors {
        let bytes = (t.data.len() * 4) as u64;
        header.insert(
            name.clone(),
            serde_json::json!({
                "dtype": "F32",
                "shape": t.shape,
                "data_offsets": [offset, offset + bytes],
            }),
        );
        offset += bytes;
    }
    let mut header = serde_json::to_vec(&serde_json::Value::Object(header))?;
    while header.len() % 8 != 0 {
        header.push(b' ');
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for t in tensors.values() {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, header: &str, payload: &[u8]) {
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(payload);
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn round_trip_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let mut m = BTreeMap::new();
        m.insert("b".to_string(), Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.0]).unwrap());
        m.insert("a".to_string(), Tensor::new(vec![3], vec![0.25, 0.5, 1e-7]).unwrap());
        write(&path, &m).unwrap();
        assert_eq!(read(&path).unwrap(), m);
    }

    #[test]
    fn widens_f16_and_bf16() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.safetensors");
        let mut payload = Vec::new();
        for v in [1.5f32, -0.25] {
            payload.extend_from_slice(&half::f16::from_f32(v).to_le_bytes());
        }
        for v in [2.0f32, 3.0] {
            payload.extend_from_slice(&half::bf16::from_f32(v).to_le_bytes());
        }
        write_raw(
            &path,
            r#"{"h":{"dtype":"F16","shape":[2],"data_offsets":[0,4]},"g":{"dtype":"BF16","shape":[2],"data_offsets":[4,8]},"__metadata__":{"format":"pt"}}"#,
            &payload,
        );
        let t = read(&path).unwrap();
        assert_eq!(t["h"].data, vec![1.5, -0.25]);
        assert_eq!(t["g"].data, vec![2.0, 3.0]);
    }

    #[test]
    fn rejects_unsupported_dtype_and_bad_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.safetensors");
        write_raw(&path, r#"{"i":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}}"#, &[0; 8]);
        assert!(matches!(read(&path), Err(Error::Format(_))));
        write_raw(&path, r#"{"f":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}}"#, &[0; 8]);
        assert!(matches!(read(&path), Err(Error::Format(_))));
        std::fs::write(&path, [1, 2, 3]).unwrap();
        assert!(matches!(read(&path), Err(Error::Format(_))));
    }
}
