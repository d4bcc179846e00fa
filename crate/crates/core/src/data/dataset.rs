use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::numcore::Tensor;

/// Image shape as `[channels, height, width]`.
pub type ImageShape = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, DataError> {
        match tag {
            0 => Ok(Split::Train),
            1 => Ok(Split::Test),
            other => Err(DataError::Malformed(format!("unknown split tag {other}"))),
        }
    }
}

/// Images in `[0, 1]` with integer class labels, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    shape: ImageShape,
    classes: usize,
    split: Split,
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(shape: ImageShape, classes: usize, split: Split) -> Self {
        Self {
            shape,
            classes,
            split,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, image: &[f32], label: usize) -> Result<(), DataError> {
        if image.len() != self.image_len() {
            return Err(DataError::Malformed(format!(
                "image has {} values, expected {}",
                image.len(),
                self.image_len()
            )));
        }
        if label >= self.classes {
            return Err(DataError::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        if let Some(v) = image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::PixelOutOfRange(*v));
        }
        self.pixels.extend_from_slice(image);
        self.labels.push(label);
        Ok(())
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image_tensor(&self, i: usize) -> Tensor {
        let [c, h, w] = self.shape;
        Tensor::new(vec![c, h, w], self.image(i).to_vec()).expect("dataset image shape")
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the given samples into a `[n, c, h, w]` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.shape;
        let t = Tensor::new(vec![indices.len(), c, h, w], data).expect("batch shape");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.shape, self.classes, self.split);
        for &i in indices {
            out.pixels.extend_from_slice(self.image(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    pub(crate) fn image_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.image_len();
        &mut self.pixels[i * n..(i + 1) * n]
    }

    pub(crate) fn set_label(&mut self, i: usize, label: usize) {
        self.labels[i] = label;
    }
}

pub const DATASET_MAGIC: &[u8; 4] = b"NSDS";
pub const DATASET_VERSION: u32 = 1;

/// Serialises a dataset. Layout (little endian):
/// `"NSDS" | version u32 | count u32 | c u32 | h u32 | w u32 | classes u32 |
/// split u8 | config hash [32] | count x (f32 x c*h*w, label u16)`.
pub fn write_dataset<W: Write>(
    mut out: W,
    ds: &LabeledDataset,
    config_hash: &[u8; 32],
) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(64 + ds.pixels.len() * 4 + ds.len() * 2);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [ds.len(), ds.shape[0], ds.shape[1], ds.shape[2], ds.classes] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(ds.split.tag());
    buf.extend_from_slice(config_hash);
    for i in 0..ds.len() {
        for v in ds.image(i) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(ds.labels[i] as u16).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Parses a dataset written by [`write_dataset`], returning it with its embedded config hash.
pub fn read_dataset<R: Read>(mut input: R) -> Result<(LabeledDataset, [u8; 32]), DataError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse_dataset(&bytes)
}

pub fn parse_dataset(bytes: &[u8]) -> Result<(LabeledDataset, [u8; 32]), DataError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != DATASET_MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = cur.u32()?;
    if version != DATASET_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let count = cur.u32()? as usize;
    let shape = [
        cur.u32()? as usize,
        cur.u32()? as usize,
        cur.u32()? as usize,
    ];
    let classes = cur.u32()? as usize;
    if shape.contains(&0) || classes == 0 {
        return Err(DataError::Malformed(format!(
            "shape {shape:?} with {classes} classes"
        )));
    }
    let split = Split::from_tag(cur.take(1)?[0])?;
    let mut hash = [0u8; 32];
    hash.copy_from_slice(cur.take(32)?);
    let mut ds = LabeledDataset::new(shape, classes, split);
    let n = ds.image_len();
    let mut image = vec![0.0f32; n];
    for _ in 0..count {
        for px in image.iter_mut() {
            *px = f32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        }
        let label = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        ds.push(&image, label)?;
    }
    if cur.pos != bytes.len() {
        return Err(DataError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok((ds, hash))
}

/// Bytes per record in the packed 32x32 RGB format: one label byte then
/// 1024 red, 1024 green and 1024 blue bytes.
pub const PACKED_RECORD_LEN: usize = 1 + 3072;

/// Imports the packed 3072-bytes-per-image format (label byte + planar RGB).
pub fn import_packed_rgb32(bytes: &[u8], split: Split) -> Result<LabeledDataset, DataError> {
    if bytes.len() % PACKED_RECORD_LEN != 0 {
        return Err(DataError::Truncated);
    }
    let mut ds = LabeledDataset::new([3, 32, 32], 10, split);
    let mut image = vec![0.0f32; 3072];
    for rec in bytes.chunks(PACKED_RECORD_LEN) {
        for (px, &b) in image.iter_mut().zip(&rec[1..]) {
            *px = b as f32 / 255.0;
        }
        ds.push(&image, rec[0] as usize)?;
    }
    Ok(ds)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).ok_or(DataError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(DataError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
