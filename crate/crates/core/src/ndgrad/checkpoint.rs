//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! magic    4 bytes  "LUSB"
//! version  u16      1
//! count    u32      number of tensors
//! repeated count times:
//!   name_len u32
//!   name     name_len bytes, UTF-8
//!   rank     u32
//!   extents  rank x u32
//!   values   product(extents) x f32
//! ```

use std::io::{Read, Write};

use crate::ndgrad::{GradError, ParamStore, Tensor};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"LUSB";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("architecture mismatch: {0}")]
    Mismatch(String),
}

impl From<GradError> for CheckpointError {
    fn from(e: GradError) -> Self {
        CheckpointError::Malformed(e.to_string())
    }
}

pub fn encode<T: Scalar>(params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_values() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>, CheckpointError> {
    let mut c = Cursor { bytes };
    if c.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = c.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|e| CheckpointError::Malformed(format!("tensor name: {e}")))?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        store.push(name, Tensor::new(shape, values)?);
    }
    if !c.bytes.is_empty() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", c.bytes.len())));
    }
    Ok(store)
}

pub fn write<T: Scalar>(params: &ParamStore<T>, mut w: impl Write) -> Result<(), CheckpointError> {
    w.write_all(&encode(params))?;
    Ok(())
}

pub fn read<T: Scalar>(mut r: impl Read) -> Result<ParamStore<T>, CheckpointError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Copies values from `source` into `target`, which must have identical names
/// and shapes in the same order.
pub fn load_into<T: Scalar>(
    target: &mut ParamStore<T>,
    source: &ParamStore<T>,
) -> Result<(), CheckpointError> {
    target.check_aligned(source).map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
    for i in 0..target.len() {
        target.values_mut(i).copy_from_slice(source.tensor(i).values());
    }
    Ok(())
}
