//! The noise-based detector: reconstruction noise, its feature representation
//! under the classifier, anomaly scoring and FPR-calibrated thresholding.

mod bundle;
mod detector;
mod features;
mod gmm;
mod threshold;

pub use bundle::{Bundle, Detection, BUNDLE_MAGIC};
pub use detector::{fit_detector, Detector, DetectorKind, DetectorParams, Knn};
pub use features::{extract_noise_features, noise_features_of};
pub use gmm::{fit_gmm, Gmm, GmmFit, GmmOptions};
pub use threshold::{calibrate_threshold, Threshold};

use thiserror::Error;

use crate::models::ModelError;
use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("need at least {need} feature vectors, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("feature length {got} does not match the fitted length {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("EM collapsed a mixture component on every one of {restarts} restarts")]
    DegenerateMixture { restarts: usize },
    #[error("no scores to calibrate on")]
    EmptyScores,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
