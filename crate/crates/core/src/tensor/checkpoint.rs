//! Flat binary container of named tensors.
//!
//! ```text
//! magic      4 bytes    "MBTC" (parameters) or "MBTO" (optimizer state)
//! version    u32 LE
//! count      u32 LE
//! count x {
//!     name_len  u32 LE
//!     name      name_len bytes, UTF-8
//!     rank      u32 LE
//!     extents   rank x u32 LE
//!     values    prod(extents) x f32 LE
//! }
//! ```
//!
//! Sections may be concatenated; [`decode_section`] reports how many bytes
//! it consumed.

use std::collections::HashSet;

use super::{ParamStore, Scalar, Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const PARAM_MAGIC: [u8; 4] = *b"MBTC";
pub const OPTIMIZER_MAGIC: [u8; 4] = *b"MBTO";
pub const FORMAT_VERSION: u32 = 1;

/// Names longer than this are rejected when decoding.
const MAX_NAME_LEN: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl NamedTensor {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|v| v.as_f32()).collect(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::new(&self.shape, self.values.iter().map(|&v| T::from_f32(v)).collect())
    }
}

pub fn encode_section(magic: [u8; 4], entries: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Decodes one section starting at the beginning of `bytes`. Returns the
/// entries and the number of bytes consumed.
pub fn decode_section(bytes: &[u8], magic: [u8; 4]) -> Result<(Vec<NamedTensor>, usize)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let m = r.take(4, "magic")?;
    if m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(m),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = r.u32("entry count")? as usize;
    // Every entry needs at least 12 bytes; refuse counts the input cannot hold.
    if count > r.remaining() / 12 {
        return Err(Error::Format(format!("entry count {count} exceeds input size")));
    }
    let mut entries = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    for idx in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(Error::Format(format!("entry {idx}: name length {name_len} too large")));
        }
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format(format!("entry {idx}: name is not UTF-8")))?
            .to_owned();
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate entry `{name}`")));
        }
        let rank = r.u32("rank")? as usize;
        if rank > MAX_RANK {
            return Err(Error::Format(format!("`{name}`: rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = r.u32("extent")? as usize;
            if d == 0 {
                return Err(Error::Format(format!("`{name}`: zero extent")));
            }
            n = n
                .checked_mul(d)
                .filter(|&n| n <= r.remaining() / 4 + 1)
                .ok_or_else(|| Error::Format(format!("`{name}`: extents exceed input size")))?;
            shape.push(d);
        }
        let raw = r.take(n * 4, "values")?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.push(NamedTensor { name, shape, values });
    }
    Ok((entries, r.pos))
}

pub fn params_to_entries<T: Scalar>(store: &ParamStore<T>) -> Vec<NamedTensor> {
    store
        .iter()
        .map(|p| NamedTensor::from_tensor(p.name.clone(), &p.value))
        .collect()
}

/// Encodes every parameter value as an `MBTC` section.
pub fn encode_params<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    encode_section(PARAM_MAGIC, &params_to_entries(store))
}

/// Overwrites the values in `store` from decoded entries. The entry set must
/// match the store exactly in names and shapes.
pub fn load_entries_into<T: Scalar>(store: &mut ParamStore<T>, entries: &[NamedTensor]) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds {} tensors, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for e in entries {
        let id = store
            .id(&e.name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("unknown tensor `{}`", e.name)))?;
        let p = store.get_mut(id);
        if p.value.shape() != e.shape.as_slice() {
            return Err(Error::CheckpointMismatch(format!(
                "`{}` has shape {:?} in the checkpoint but {:?} in the model",
                e.name,
                e.shape,
                p.value.shape()
            )));
        }
        p.value = e.to_tensor()?;
    }
    Ok(())
}

/// Decodes an `MBTC` section into `store`; returns bytes consumed.
pub fn decode_params_into<T: Scalar>(store: &mut ParamStore<T>, bytes: &[u8]) -> Result<usize> {
    let (entries, used) = decode_section(bytes, PARAM_MAGIC)?;
    load_entries_into(store, &entries)?;
    Ok(used)
}
