//! Named tensor container shared by every persisted model.
//!
//! Layout (little endian): `"NSCK" | version u32` followed by records
//! `name_len u32 | name utf-8 | rank u32 | dims u32 x rank | f32 x prod(dims)`
//! until end of input.

use std::io::Write;

use super::ModelError;
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const HASH_ENTRY: &str = "meta.config_hash";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))
    }

    /// Stores integers exactly representable in `f32` as a rank-1 tensor.
    pub fn push_ints(&mut self, name: impl Into<String>, values: &[usize]) {
        self.push(
            name,
            Tensor::from_vec(values.iter().map(|&v| v as f32).collect()),
        );
    }

    pub fn ints(&self, name: &str) -> Result<Vec<usize>, ModelError> {
        self.get(name)?
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0 {
                    Ok(v as usize)
                } else {
                    Err(ModelError::Checkpoint(format!(
                        "{name} holds non-integer {v}"
                    )))
                }
            })
            .collect()
    }

    pub fn set_config_hash(&mut self, hash: &[u8; 32]) {
        self.tensors.retain(|(n, _)| n != HASH_ENTRY);
        self.push(
            HASH_ENTRY,
            Tensor::from_vec(hash.iter().map(|&b| b as f32).collect()),
        );
    }

    pub fn config_hash(&self) -> Option<[u8; 32]> {
        let t = self.get(HASH_ENTRY).ok()?;
        if t.len() != 32 {
            return None;
        }
        let mut out = [0u8; 32];
        for (o, &v) in out.iter_mut().zip(t.data()) {
            *o = v as u8;
        }
        Some(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for (name, t) in &self.tensors {
            encode_tensor(&mut buf, name, t);
        }
        buf
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        out.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let mut pos = 8;
        let mut ck = Checkpoint::new();
        while pos < bytes.len() {
            let (name, t) = decode_tensor(bytes, &mut pos)?;
            ck.tensors.push((name, t));
        }
        Ok(ck)
    }
}

/// Appends one `(name, tensor)` record in checkpoint encoding.
pub fn encode_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Reads one record at `*pos`, advancing it.
pub fn decode_tensor(bytes: &[u8], pos: &mut usize) -> Result<(String, Tensor), ModelError> {
    let truncated = || ModelError::Checkpoint("truncated record".into());
    let mut take = |n: usize| -> Result<&[u8], ModelError> {
        let end = pos.checked_add(n).ok_or_else(truncated)?;
        let s = bytes.get(*pos..end).ok_or_else(truncated)?;
        *pos = end;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let name_len = u32_at(take(4)?);
    let name = String::from_utf8(take(name_len)?.to_vec())
        .map_err(|_| ModelError::Checkpoint("tensor name is not utf-8".into()))?;
    let rank = u32_at(take(4)?);
    if rank == 0 || rank > 8 {
        return Err(ModelError::Checkpoint(format!(
            "tensor {name} has rank {rank}"
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32_at(take(4)?));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c > 0 && c <= bytes.len() / 4)
        .ok_or_else(|| ModelError::Checkpoint(format!("tensor {name} has shape {shape:?}")))?;
    let payload = take(count * 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let t = Tensor::new(shape, data).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    Ok((name, t))
}
