//! Labeled image datasets, their on-disk format, and a synthetic generator.

mod dataset;
mod synthetic;

pub use dataset::{
    import_packed_rgb32, parse_dataset, read_dataset, write_dataset, ImageShape, LabeledDataset,
    Split, DATASET_MAGIC, DATASET_VERSION, PACKED_RECORD_LEN,
};
pub use synthetic::{generate_synthetic, SyntheticSpec, PATTERN_COUNT};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file is truncated")]
    Truncated,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("pixel value {0} outside [0, 1]")]
    PixelOutOfRange(f32),
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
