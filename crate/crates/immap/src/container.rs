//! The .imrd container: a newline-terminated UTF-8 JSON header describing
//! named arrays (shape, dtype, byte offset) plus acquisition metadata,
//! followed by a payload of concatenated little-endian arrays.
//!
//! Complex fields are interleaved 32-bit float (re, im), masks are 8-bit
//! unsigned, covariance diagonals are 32-bit float. Declared offsets and
//! sizes exactly tile the payload; round-trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ImmapError, Result};

pub const MAGIC: &str = "IMRD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    /// Interleaved (re, im) 32-bit floats.
    C64 { shape: Vec<usize>, data: Vec<f32> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
    F32 { shape: Vec<usize>, data: Vec<f32> },
}

impl ArrayData {
    pub fn from_complex(shape: Vec<usize>, values: &[Complex64]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(ImmapError::Container(format!(
                "complex array: shape product {n} vs {} values",
                values.len()
            )));
        }
        let mut data = Vec::with_capacity(2 * n);
        for v in values {
            data.push(v.re as f32);
            data.push(v.im as f32);
        }
        Ok(Self::C64 { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(ImmapError::Container(format!(
                "f32 array: shape product {n} vs {} values",
                values.len()
            )));
        }
        Ok(Self::F32 {
            shape,
            data: values.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn from_bool(shape: Vec<usize>, values: &[bool]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(ImmapError::Container(format!(
                "u8 array: shape product {n} vs {} values",
                values.len()
            )));
        }
        Ok(Self::U8 {
            shape,
            data: values.iter().map(|&b| u8::from(b)).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Self::C64 { shape, .. } | Self::U8 { shape, .. } | Self::F32 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> &'static str {
        match self {
            Self::C64 { .. } => "c64",
            Self::U8 { .. } => "u8",
            Self::F32 { .. } => "f32",
        }
    }

    pub fn nbytes(&self) -> usize {
        match self {
            Self::C64 { data, .. } | Self::F32 { data, .. } => 4 * data.len(),
            Self::U8 { data, .. } => data.len(),
        }
    }

    pub fn to_complex(&self) -> Result<Vec<Complex64>> {
        match self {
            Self::C64 { data, .. } => Ok(data
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
                .collect()),
            _ => Err(ImmapError::Container(format!(
                "array has dtype {}, expected c64",
                self.dtype()
            ))),
        }
    }

    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match self {
            Self::F32 { data, .. } => Ok(data.iter().map(|&v| v as f64).collect()),
            _ => Err(ImmapError::Container(format!(
                "array has dtype {}, expected f32",
                self.dtype()
            ))),
        }
    }

    pub fn to_bool(&self) -> Result<Vec<bool>> {
        match self {
            Self::U8 { data, .. } => Ok(data.iter().map(|&v| v != 0).collect()),
            _ => Err(ImmapError::Container(format!(
                "array has dtype {}, expected u8",
                self.dtype()
            ))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    arrays: Vec<ArrayEntry>,
    meta: serde_json::Map<String, Value>,
}

/// In-memory .imrd container. Array order is preserved and determines the
/// payload layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Imrd {
    pub meta: serde_json::Map<String, Value>,
    pub arrays: Vec<(String, ArrayData)>,
}

impl Imrd {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&ArrayData> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn require(&self, name: &str) -> Result<&ArrayData> {
        self.get(name).ok_or_else(|| {
            ImmapError::Container(format!("container is missing array '{name}'"))
        })
    }

    pub fn push(&mut self, name: &str, data: ArrayData) {
        self.arrays.push((name.to_string(), data));
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| ImmapError::Container(format!("missing numeric metadata '{key}'")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| ImmapError::Container(format!("missing integer metadata '{key}'")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| ImmapError::Container(format!("missing string metadata '{key}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0usize;
        for (name, a) in &self.arrays {
            entries.push(ArrayEntry {
                name: name.clone(),
                dtype: a.dtype().to_string(),
                shape: a.shape().to_vec(),
                offset,
                nbytes: a.nbytes(),
            });
            offset += a.nbytes();
        }
        let header = Header {
            magic: MAGIC.to_string(),
            version: FORMAT_VERSION,
            arrays: entries,
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for (_, a) in &self.arrays {
            match a {
                ArrayData::C64 { data, .. } | ArrayData::F32 { data, .. } => {
                    for v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                ArrayData::U8 { data, .. } => out.extend_from_slice(data),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ImmapError::Container("no header line found".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| ImmapError::Container(format!("invalid header JSON: {e}")))?;
        if header.magic != MAGIC {
            return Err(ImmapError::Container(format!(
                "bad magic '{}', expected '{MAGIC}'",
                header.magic
            )));
        }
        if header.version != FORMAT_VERSION {
            return Err(ImmapError::Container(format!(
                "unsupported format version {}",
                header.version
            )));
        }
        let payload = &bytes[newline + 1..];
        let mut expected_offset = 0usize;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in &header.arrays {
            if e.offset != expected_offset {
                return Err(ImmapError::Container(format!(
                    "array '{}' offset {} does not tile the payload (expected {expected_offset})",
                    e.name, e.offset
                )));
            }
            let end = e.offset + e.nbytes;
            if end > payload.len() {
                return Err(ImmapError::Container(format!(
                    "array '{}' extends past payload ({} > {})",
                    e.name,
                    end,
                    payload.len()
                )));
            }
            let raw = &payload[e.offset..end];
            let n: usize = e.shape.iter().product();
            let data = match e.dtype.as_str() {
                "c64" => {
                    if e.nbytes != 8 * n {
                        return Err(ImmapError::Container(format!(
                            "array '{}': {} bytes for {} complex values",
                            e.name, e.nbytes, n
                        )));
                    }
                    ArrayData::C64 {
                        shape: e.shape.clone(),
                        data: raw
                            .chunks_exact(4)
                            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                            .collect(),
                    }
                }
                "f32" => {
                    if e.nbytes != 4 * n {
                        return Err(ImmapError::Container(format!(
                            "array '{}': {} bytes for {} f32 values",
                            e.name, e.nbytes, n
                        )));
                    }
                    ArrayData::F32 {
                        shape: e.shape.clone(),
                        data: raw
                            .chunks_exact(4)
                            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                            .collect(),
                    }
                }
                "u8" => {
                    if e.nbytes != n {
                        return Err(ImmapError::Container(format!(
                            "array '{}': {} bytes for {} u8 values",
                            e.name, e.nbytes, n
                        )));
                    }
                    ArrayData::U8 {
                        shape: e.shape.clone(),
                        data: raw.to_vec(),
                    }
                }
                other => {
                    return Err(ImmapError::Container(format!(
                        "array '{}': unknown dtype '{other}'",
                        e.name
                    )))
                }
            };
            arrays.push((e.name.clone(), data));
            expected_offset = end;
        }
        if expected_offset != payload.len() {
            return Err(ImmapError::Container(format!(
                "payload has {} trailing bytes",
                payload.len() - expected_offset
            )));
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut f = BufReader::new(File::open(path)?);
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
