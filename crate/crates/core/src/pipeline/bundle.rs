//! A deployable detector: autoencoder, feature extractor, fitted detector and threshold.
//!
//! Layout (little endian): `"NSBD" | version u32 | config hash [32]`, then three
//! length-prefixed (u64) checkpoints (autoencoder, classifier, detector state)
//! with a detector kind byte before the last, then `theta f64 | max_fpr f64 |
//! calibration size u32`.

use std::io::{Read, Write};

use serde::Serialize;

use super::{extract_noise_features, Detector, DetectorKind, PipelineError, Threshold};
use crate::models::{Autoencoder, Checkpoint, Classifier};
use crate::numcore::Tensor;

pub const BUNDLE_MAGIC: &[u8; 4] = b"NSBD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub autoencoder: Autoencoder,
    pub classifier: Classifier,
    pub detector: Detector,
    pub threshold: Threshold,
    pub config_hash: [u8; 32],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub score: f64,
    pub malicious: bool,
}

impl Bundle {
    /// Scores and classifies one image or a batch.
    pub fn detect(&self, x: &Tensor) -> Result<Vec<Detection>, PipelineError> {
        extract_noise_features(&self.autoencoder, &self.classifier, x)?
            .iter()
            .map(|tau| {
                let score = self.detector.score(tau)?;
                Ok(Detection {
                    score,
                    malicious: self.threshold.is_malicious(score),
                })
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BUNDLE_MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.config_hash);
        let section = |buf: &mut Vec<u8>, bytes: Vec<u8>| {
            buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            buf.extend_from_slice(&bytes);
        };
        section(&mut buf, self.autoencoder.to_checkpoint().to_bytes());
        section(&mut buf, self.classifier.to_checkpoint().to_bytes());
        buf.push(detector_tag(self.detector.kind()));
        section(&mut buf, self.detector.to_checkpoint().to_bytes());
        buf.extend_from_slice(&self.threshold.theta.to_le_bytes());
        buf.extend_from_slice(&self.threshold.max_fpr.to_le_bytes());
        buf.extend_from_slice(&(self.threshold.calibration_size as u32).to_le_bytes());
        buf
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), PipelineError> {
        out.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self, PipelineError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != BUNDLE_MAGIC {
            return Err(malformed("bad magic bytes"));
        }
        if cur.u32()? != VERSION {
            return Err(malformed("unsupported version"));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(cur.take(32)?);
        let autoencoder = Autoencoder::from_checkpoint(&cur.section()?)?;
        let classifier = Classifier::from_checkpoint(&cur.section()?)?;
        let kind =
            detector_from_tag(cur.take(1)?[0]).ok_or_else(|| malformed("unknown detector kind"))?;
        let detector = Detector::from_checkpoint(kind, &cur.section()?)?;
        let theta = cur.f64()?;
        let max_fpr = cur.f64()?;
        let calibration_size = cur.u32()? as usize;
        if cur.pos != bytes.len() {
            return Err(malformed("trailing bytes"));
        }
        if detector.dim() != classifier.feature_dim() {
            return Err(malformed("detector and classifier feature sizes differ"));
        }
        Ok(Self {
            autoencoder,
            classifier,
            detector,
            threshold: Threshold {
                theta,
                max_fpr,
                calibration_size,
            },
            config_hash,
        })
    }
}

fn malformed(m: &str) -> PipelineError {
    PipelineError::Malformed(m.to_string())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| malformed("length overflow"))?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| malformed("truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PipelineError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, PipelineError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn section(&mut self) -> Result<Checkpoint, PipelineError> {
        let len = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| malformed("section too large"))?;
        Ok(Checkpoint::from_bytes(self.take(len)?)?)
    }
}

fn detector_tag(kind: DetectorKind) -> u8 {
    DetectorKind::ALL
        .iter()
        .position(|&k| k == kind)
        .expect("listed kind") as u8
}

fn detector_from_tag(tag: u8) -> Option<DetectorKind> {
    DetectorKind::ALL.get(tag as usize).copied()
}
