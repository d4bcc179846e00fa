//! Experiment reports and their CSV/JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::{EvalConfig, Setting};
use super::metrics::RocPoint;
use crate::baselines::BaselineKind;
use crate::pipeline::DetectorKind;

/// Any scoring rule in a report: a noise-feature detector or a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoreKind {
    Noise(DetectorKind),
    Baseline(BaselineKind),
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Noise(k) => k.name(),
            ScoreKind::Baseline(k) => k.name(),
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        DetectorKind::from_name(name)
            .map(ScoreKind::Noise)
            .or_else(|| {
                BaselineKind::ALL
                    .into_iter()
                    .find(|k| k.name() == name)
                    .map(ScoreKind::Baseline)
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub detector: String,
    pub auroc: f64,
    /// Calibrated threshold applied for the rates below.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False-positive rate on the matched benign controls.
    pub fpr: f64,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub setting: Setting,
    pub attack: String,
    /// Malicious samples (and as many matched benign controls) scored.
    pub samples: usize,
    /// Sources on which the attack raised a recoverable error.
    pub skipped: usize,
    /// Fraction of malicious samples misclassified by the defended model.
    pub success_rate: f64,
    pub mean_l2: f64,
    pub mean_linf: f64,
    pub mean_benign_l2_pre_clip: f64,
    pub mean_benign_l2_post_clip: f64,
    /// Mean per-feature KS `-ln p` of malicious noise features against natural ones.
    pub ks_malicious_mean: f64,
    /// The same for matched benign noise features.
    pub ks_benign_mean: f64,
    pub ks_malicious: Vec<f64>,
    pub ks_benign: Vec<f64>,
    pub detectors: Vec<DetectorResult>,
}

impl AttackResult {
    pub fn detector(&self, name: &str) -> Option<&DetectorResult> {
        self.detectors.iter().find(|d| d.detector == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    /// Which defended model: `target` or `backdoored`.
    pub model: String,
    pub detector: String,
    pub theta: f64,
    pub max_fpr: f64,
    pub calibration_size: usize,
    /// Fraction of calibration scores above `theta`.
    pub calibration_fpr: f64,
    pub calibration_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackdoorSummary {
    pub target_class: usize,
    pub poisoned_samples: usize,
    pub clean_accuracy: f64,
    /// Clean accuracy of the same architecture and seed trained without poison.
    pub twin_clean_accuracy: f64,
    /// Accuracy against true labels on triggered test images of non-target classes.
    pub triggered_accuracy: f64,
    /// Fraction of those triggered images classified as the target class.
    pub trigger_success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub classifier_test_accuracy: f64,
    pub surrogate_test_accuracy: f64,
    /// Mean squared reconstruction error per pixel on the test split.
    pub autoencoder_test_mse: f64,
    pub backdoor: Option<BackdoorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub config: EvalConfig,
    /// SHA-256 of each model checkpoint.
    pub model_checksums: BTreeMap<String, String>,
    pub models: ModelSummary,
    pub calibration: Vec<CalibrationRow>,
    pub results: Vec<AttackResult>,
}

impl EvalReport {
    pub fn result(&self, setting: Setting, attack: &str) -> Option<&AttackResult> {
        self.results
            .iter()
            .find(|r| r.setting == setting && r.attack == attack)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialise to JSON");
        s.push('\n');
        s
    }

    /// One row per setting, attack, detector and metric.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# config_hash={}\nsetting,attack,detector,metric,value\n",
            self.config_hash
        );
        for r in &self.results {
            for d in &r.detectors {
                for (metric, value) in [
                    ("auroc", d.auroc),
                    ("precision", d.precision),
                    ("recall", d.recall),
                    ("f1", d.f1),
                    ("fpr", d.fpr),
                    ("threshold", d.threshold),
                ] {
                    writeln!(
                        out,
                        "{},{},{},{metric},{value}",
                        r.setting.name(),
                        r.attack,
                        d.detector
                    )
                    .expect("string write");
                }
            }
        }
        out
    }

    /// ROC points of every cell.
    pub fn roc_csv(&self) -> String {
        let mut out = format!(
            "# config_hash={}\nsetting,attack,detector,threshold,fpr,tpr\n",
            self.config_hash
        );
        for r in &self.results {
            for d in &r.detectors {
                for p in &d.roc {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        r.setting.name(),
                        r.attack,
                        d.detector,
                        p.threshold,
                        p.fpr,
                        p.tpr
                    )
                    .expect("string write");
                }
            }
        }
        out
    }
}
