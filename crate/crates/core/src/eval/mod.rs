//! The measurement protocol: matched-norm benign pairing, detection metrics,
//! and the end-to-end experiment producing a report.

mod experiment;
mod matched;
mod metrics;
mod report;

pub use experiment::{
    evaluate, fit_bundle, generate_attack, run_experiment, train_models, trigger_for,
    AutoencoderConfig, Backdoored, ClassifierConfig, EvalConfig, GeneratedAttack, Setting,
    TrainedModels,
};
pub use matched::{matched_norm_benign, permute_perturbation};
pub use metrics::{
    auroc, kolmogorov_survival, ks_neglogp, ks_neglogp_1d, ks_statistic, pair_counts,
    prf1_at_threshold, roc_points, Prf1, RocPoint, P_FLOOR,
};
pub use report::{
    AttackResult, BackdoorSummary, CalibrationRow, DetectorResult, EvalReport, ModelSummary,
    ScoreKind,
};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attacks::AttackError;
use crate::models::ModelError;
use crate::numcore::NumError;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty {0}")]
    EmptyInput(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<EvalError>,
    },
}

impl EvalError {
    /// The innermost error, past any stage tags.
    pub fn root(&self) -> &EvalError {
        match self {
            EvalError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

/// SHA-256 of the canonical JSON encoding of a configuration.
pub fn config_hash<T: Serialize>(config: &T) -> [u8; 32] {
    let json = serde_json::to_vec(config).expect("configurations serialise to JSON");
    Sha256::digest(&json).into()
}

/// A seed derived from a parent seed and a label, so that independent
/// stages draw from independent streams.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}
