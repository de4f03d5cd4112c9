//! Flat binary tensor container used for checkpoints.
//!
//! Layout: magic `LFDT`, format version u32 LE, then records until EOF.
//! Each record: name length u32 LE, UTF-8 name, dtype tag u8 (0 = f32,
//! 1 = f64), rank u8, dims as u64 LE, then raw little-endian values.

use crate::error::{Error, Result};
use crate::tensor::DType;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"LFDT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            TensorData::F32(v) => Some(v),
            TensorData::F64(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            TensorData::F64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Entry {
    pub fn f32(name: impl Into<String>, dims: Vec<u64>, data: Vec<f32>) -> Self {
        Entry {
            name: name.into(),
            dims,
            data: TensorData::F32(data),
        }
    }

    pub fn f64(name: impl Into<String>, dims: Vec<u64>, data: Vec<f64>) -> Self {
        Entry {
            name: name.into(),
            dims,
            data: TensorData::F64(data),
        }
    }
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for e in entries {
        let numel: u64 = e.dims.iter().product();
        if numel as usize != e.data.len() {
            return Err(Error::BadContainer(format!(
                "entry '{}': dims {:?} imply {} values, got {}",
                e.name,
                e.dims,
                numel,
                e.data.len()
            )));
        }
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.data.dtype().tag());
        out.push(e.dims.len() as u8);
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &e.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::BadContainer("missing LFDT magic".into()));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(Error::BadContainer(format!(
            "unsupported container version {version}"
        )));
    }
    let mut pos = 8;
    let mut entries = Vec::new();
    while pos < bytes.len() {
        let name_len = read_u32(bytes, &mut pos)? as usize;
        if pos + name_len > bytes.len() {
            return Err(Error::BadContainer("truncated name".into()));
        }
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|e| Error::BadContainer(format!("bad name: {e}")))?
            .to_string();
        pos += name_len;
        let dtype = DType::from_tag(*get(bytes, &mut pos)?)
            .ok_or_else(|| Error::BadContainer(format!("entry '{name}': bad dtype tag")))?;
        let rank = *get(bytes, &mut pos)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(bytes, &mut pos)?);
        }
        let numel: u64 = dims.iter().product();
        let data = match dtype {
            DType::F32 => {
                let need = numel as usize * 4;
                if pos + need > bytes.len() {
                    return Err(Error::BadContainer(format!(
                        "entry '{name}': payload truncated"
                    )));
                }
                let vals = bytes[pos..pos + need]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                pos += need;
                TensorData::F32(vals)
            }
            DType::F64 => {
                let need = numel as usize * 8;
                if pos + need > bytes.len() {
                    return Err(Error::BadContainer(format!(
                        "entry '{name}': payload truncated"
                    )));
                }
                let vals = bytes[pos..pos + need]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                    .collect();
                pos += need;
                TensorData::F64(vals)
            }
        };
        entries.push(Entry { name, dims, data });
    }
    Ok(entries)
}

fn get<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a u8> {
    let b = bytes
        .get(*pos)
        .ok_or_else(|| Error::BadContainer("unexpected end of container".into()))?;
    *pos += 1;
    Ok(b)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    if *pos + 4 > bytes.len() {
        return Err(Error::BadContainer("unexpected end of container".into()));
    }
    let v = u32::from_le_bytes([bytes[*pos], bytes[*pos + 1], bytes[*pos + 2], bytes[*pos + 3]]);
    *pos += 4;
    Ok(v)
}

fn read_u64(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    if *pos + 8 > bytes.len() {
        return Err(Error::BadContainer("unexpected end of container".into()));
    }
    let mut raw = [0u8; 8];
    raw.copy_from_slice(&bytes[*pos..*pos + 8]);
    *pos += 8;
    Ok(u64::from_le_bytes(raw))
}

pub fn write_container(path: &Path, entries: &[Entry]) -> Result<()> {
    fs::write(path, encode(entries)?).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Vec<Entry>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

// ---- tensor adapters ----------------------------------------------------

use crate::tensor::{Element, Shape, Tensor};

pub fn tensor_entry<E: Element>(name: &str, t: &Tensor<E>) -> Entry {
    let s = t.shape();
    let dims = vec![s.n as u64, s.c as u64, s.h as u64, s.w as u64];
    Entry {
        name: name.into(),
        dims,
        data: values_to_data(t.data()),
    }
}

pub fn vec_entry<E: Element>(name: &str, values: &[E]) -> Entry {
    Entry {
        name: name.into(),
        dims: vec![values.len() as u64],
        data: values_to_data(values),
    }
}

fn values_to_data<E: Element>(values: &[E]) -> TensorData {
    // f32 -> f64 -> f32 is lossless, so routing through f64 keeps bits intact
    match E::DTYPE {
        DType::F32 => TensorData::F32(values.iter().map(|v| v.to_f64() as f32).collect()),
        DType::F64 => TensorData::F64(values.iter().map(|v| v.to_f64()).collect()),
    }
}

fn data_to_values<E: Element>(data: &TensorData) -> Vec<E> {
    match data {
        TensorData::F32(v) => v.iter().map(|&x| E::from_f64(x as f64)).collect(),
        TensorData::F64(v) => v.iter().map(|&x| E::from_f64(x)).collect(),
    }
}

pub fn entry_to_tensor<E: Element>(entry: &Entry, expected: Shape) -> Result<Tensor<E>> {
    if entry.data.dtype() != E::DTYPE {
        return Err(Error::BadContainer(format!(
            "entry '{}' is {} but the model is {}",
            entry.name,
            entry.data.dtype().name(),
            E::DTYPE.name()
        )));
    }
    let dims: Vec<usize> = entry.dims.iter().map(|&d| d as usize).collect();
    if dims != [expected.n, expected.c, expected.h, expected.w] {
        return Err(Error::BadContainer(format!(
            "entry '{}' has dims {:?}, expected {}",
            entry.name, entry.dims, expected
        )));
    }
    Tensor::from_vec(expected, data_to_values(&entry.data))
}

pub fn entry_to_vec<E: Element>(entry: &Entry, expected_len: usize) -> Result<Vec<E>> {
    if entry.data.len() != expected_len {
        return Err(Error::BadContainer(format!(
            "entry '{}' has {} values, expected {}",
            entry.name,
            entry.data.len(),
            expected_len
        )));
    }
    Ok(data_to_values(&entry.data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let entries = vec![
            Entry::f32("conv.weight", vec![2, 1, 3, 3], (0..18).map(|i| i as f32 * 0.125 - 1.0).collect()),
            Entry::f64("bn.running_mean", vec![4], vec![0.0, -0.5, 1e-30, 3.25]),
            Entry::f32("empty", vec![0], vec![]),
        ];
        let bytes = encode(&entries).unwrap();
        assert_eq!(&bytes[..4], b"LFDT");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn bad_magic_rejected() {
        let err = decode(b"NOPE\x01\x00\x00\x00").unwrap_err();
        assert!(err.to_string().contains("LFDT"), "{err}");
    }

    #[test]
    fn dims_must_match_payload() {
        let e = Entry::f32("x", vec![3], vec![1.0, 2.0]);
        assert!(encode(&[e]).is_err());
    }

    #[test]
    fn truncated_payload_detected() {
        let entries = vec![Entry::f32("x", vec![4], vec![1.0, 2.0, 3.0, 4.0])];
        let mut bytes = encode(&entries).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(decode(&bytes).is_err());
    }
}
