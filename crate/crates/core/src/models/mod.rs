//! The target classifier (which doubles as the noise feature extractor via its
//! penultimate layer), the denoising autoencoder, SGD training and checkpoints.

mod autoencoder;
mod checkpoint;
mod classifier;
mod params;
mod train;

pub use autoencoder::{build_autoencoder, Autoencoder, AutoencoderSpec};
pub use checkpoint::{
    decode_tensor, encode_tensor, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use classifier::{build_classifier, Classifier, ClassifierOutput, ClassifierSpec};
pub use params::ParamSet;
pub use train::{train_autoencoder, train_classifier, Optimizer, TrainConfig, TrainHistory};

use thiserror::Error;

use crate::data::ImageShape;
use crate::numcore::{argmax, NumError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("incompatible input shape: {0}")]
    IncompatibleShape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A classifier whose logits can be recorded on a tape, so attacks can take
/// input gradients through it.
pub trait DifferentiableClassifier {
    fn input_shape(&self) -> ImageShape;

    fn num_classes(&self) -> usize;

    /// Records logits `[n, classes]` for the batch `x` of shape `[n, c, h, w]`.
    /// Parameters enter the tape as constants.
    fn record_logits(&self, tape: &mut Tape, x: Var) -> Result<Var, NumError>;

    /// Logits for a batch, or for a single `[c, h, w]` image as a `[1, classes]` tensor.
    fn logits(&self, x: &Tensor) -> Result<Tensor, NumError> {
        let batch = as_batch(x, self.input_shape())?;
        let mut tape = Tape::new();
        let xv = tape.constant(batch)?;
        let out = self.record_logits(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }

    /// Predicted class of a single image.
    fn classify(&self, image: &Tensor) -> Result<usize, NumError> {
        Ok(argmax(self.logits(image)?.data()))
    }
}

/// Views `x` as a batch: `[c, h, w]` becomes `[1, c, h, w]`, `[n, c, h, w]` is kept.
pub fn as_batch(x: &Tensor, shape: ImageShape) -> Result<Tensor, NumError> {
    match x.shape() {
        s if s == shape => x.reshape(&[1, shape[0], shape[1], shape[2]]),
        [_, rest @ ..] if rest == shape => Ok(x.clone()),
        s => Err(NumError::Shape(format!(
            "input {s:?} for model expecting {shape:?}"
        ))),
    }
}
