//! Attack batch files.
//!
//! Layout (little endian): `"NSAB" | version u32 | kind u8 | config length u32 |
//! config JSON | seed u64 | config hash [32] | count u32`, then per record
//! `dataset index u32 | perturbation as a checkpoint tensor record | success u8`.

use std::io::{Read, Write};

use super::{AttackError, AttackKind};
use crate::models::{decode_tensor, encode_tensor};
use crate::numcore::Tensor;

pub const ATTACK_BATCH_MAGIC: &[u8; 4] = b"NSAB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub index: usize,
    pub eta: Tensor,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackBatch {
    pub kind: AttackKind,
    /// The attack configuration, echoed as JSON.
    pub config: String,
    pub seed: u64,
    pub config_hash: [u8; 32],
    pub records: Vec<AttackRecord>,
}

pub fn write_attack_batch<W: Write>(mut out: W, batch: &AttackBatch) -> Result<(), AttackError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(ATTACK_BATCH_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(batch.kind.tag());
    buf.extend_from_slice(&(batch.config.len() as u32).to_le_bytes());
    buf.extend_from_slice(batch.config.as_bytes());
    buf.extend_from_slice(&batch.seed.to_le_bytes());
    buf.extend_from_slice(&batch.config_hash);
    buf.extend_from_slice(&(batch.records.len() as u32).to_le_bytes());
    for r in &batch.records {
        buf.extend_from_slice(&(r.index as u32).to_le_bytes());
        encode_tensor(&mut buf, "eta", &r.eta);
        buf.push(u8::from(r.success));
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_attack_batch<R: Read>(mut input: R) -> Result<AttackBatch, AttackError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let bad = |m: &str| AttackError::Malformed(m.to_string());
    let mut pos = 0usize;
    let take = |n: usize, pos: &mut usize| -> Result<&[u8], AttackError> {
        let s = bytes.get(*pos..*pos + n).ok_or_else(|| bad("truncated"))?;
        *pos += n;
        Ok(s)
    };
    if take(4, &mut pos)? != ATTACK_BATCH_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let u32_of = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    if u32_of(take(4, &mut pos)?) != VERSION {
        return Err(bad("unsupported version"));
    }
    let kind =
        AttackKind::from_tag(take(1, &mut pos)?[0]).ok_or_else(|| bad("unknown attack kind"))?;
    let len = u32_of(take(4, &mut pos)?) as usize;
    let config =
        String::from_utf8(take(len, &mut pos)?.to_vec()).map_err(|_| bad("config is not utf-8"))?;
    let seed = u64::from_le_bytes(take(8, &mut pos)?.try_into().expect("8 bytes"));
    let mut config_hash = [0u8; 32];
    config_hash.copy_from_slice(take(32, &mut pos)?);
    let count = u32_of(take(4, &mut pos)?) as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let index = u32_of(take(4, &mut pos)?) as usize;
        let (_, eta) =
            decode_tensor(&bytes, &mut pos).map_err(|e| AttackError::Malformed(e.to_string()))?;
        let success = match take(1, &mut pos)?[0] {
            0 => false,
            1 => true,
            _ => return Err(bad("success flag is not 0 or 1")),
        };
        records.push(AttackRecord {
            index,
            eta,
            success,
        });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(AttackBatch {
        kind,
        config,
        seed,
        config_hash,
        records,
    })
}
