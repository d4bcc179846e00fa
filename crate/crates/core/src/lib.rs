//! Noise-based detection of adversarial and backdoor inputs.
//!
//! A denoising autoencoder strips an input down to its natural content; the
//! residual noise is passed through the classifier's penultimate layer, and an
//! anomaly detector fitted on benign noise features flags malicious inputs.

pub mod attacks;
pub mod baselines;
pub mod data;
pub mod eval;
pub mod models;
pub mod numcore;
pub mod pipeline;
