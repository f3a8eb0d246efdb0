//! Single-file archive: magic, JSON header, named `f64` arrays, SHA-256 trailer.
//!
//! ```text
//! b"NBDCKPT1"
//! u64 header_len | header JSON
//! u64 array_count
//!   u32 name_len | name | u64 len | len x f64
//! [32] sha256 of everything above
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::ModelError;

const MAGIC: &[u8; 8] = b"NBDCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub header: serde_json::Value,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Archive {
    pub fn new(header: serde_json::Value) -> Self {
        Self { header, arrays: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.arrays.push((name.into(), values));
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("JSON value serializes");
        let payload: usize = self.arrays.iter().map(|(n, v)| 12 + n.len() + 8 * v.len()).sum();
        let mut out = Vec::with_capacity(8 + 8 + header.len() + 8 + payload + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for (name, values) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let corrupt = |m: &str| ModelError::CorruptCheckpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic or truncated file"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let header_len = r.u64()? as usize;
        let header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| ModelError::CorruptCheckpoint(format!("header: {e}")))?;
        let count = r.u64()? as usize;
        let mut arrays = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("array name is not UTF-8"))?
                .to_string();
            let len = r.u64()? as usize;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| corrupt("array length overflow"))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            arrays.push((name, values));
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { header, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| ModelError::io(path, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| ModelError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
