//! Noise representations: classifier features of the autoencoder residual.

use super::PipelineError;
use crate::models::{as_batch, Autoencoder, Classifier};
use crate::numcore::Tensor;

const CHUNK: usize = 64;

/// Penultimate-layer features of `x - A(x)` for one image `[c, h, w]` or a
/// batch `[n, c, h, w]`; one vector per image.
pub fn extract_noise_features(
    ae: &Autoencoder,
    classifier: &Classifier,
    x: &Tensor,
) -> Result<Vec<Vec<f32>>, PipelineError> {
    let batch = as_batch(x, ae.spec().input_shape)?;
    if ae.spec().input_shape != classifier.spec().input_shape {
        return Err(PipelineError::InvalidParameter(format!(
            "autoencoder input {:?} differs from classifier input {:?}",
            ae.spec().input_shape,
            classifier.spec().input_shape
        )));
    }
    let noise = ae.recon_noise(&batch)?;
    let out = classifier.forward(&noise)?;
    let d = classifier.feature_dim();
    Ok(out.features.data().chunks(d).map(<[f32]>::to_vec).collect())
}

/// [`extract_noise_features`] over a list of single images, batched internally.
pub fn noise_features_of(
    ae: &Autoencoder,
    classifier: &Classifier,
    images: &[Tensor],
) -> Result<Vec<Vec<f32>>, PipelineError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        out.extend(extract_noise_features(
            ae,
            classifier,
            &Tensor::stack(&refs)?,
        )?);
    }
    Ok(out)
}
