//! Decision thresholds calibrated to a false-positive budget.

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Scores strictly above this are flagged.
    pub theta: f64,
    pub max_fpr: f64,
    pub calibration_size: usize,
}

impl Threshold {
    pub fn is_malicious(&self, score: f64) -> bool {
        score > self.theta
    }

    /// Fraction of `scores` flagged.
    pub fn flagged_fraction(&self, scores: &[f64]) -> f64 {
        scores.iter().filter(|&&s| self.is_malicious(s)).count() as f64 / scores.len().max(1) as f64
    }
}

/// The smallest benign score `theta` with `#{s > theta} / n <= max_fpr`.
pub fn calibrate_threshold(
    benign_scores: &[f64],
    max_fpr: f64,
) -> Result<Threshold, PipelineError> {
    if benign_scores.is_empty() {
        return Err(PipelineError::EmptyScores);
    }
    if !(max_fpr > 0.0 && max_fpr < 1.0) {
        return Err(PipelineError::InvalidParameter(format!(
            "max fpr {max_fpr}"
        )));
    }
    if benign_scores.iter().any(|s| s.is_nan()) {
        return Err(PipelineError::InvalidParameter("NaN score".into()));
    }
    let n = benign_scores.len();
    let mut sorted = benign_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    // largest count of scores allowed above the threshold
    let mut allowed = ((max_fpr * n as f64).floor() as usize).min(n - 1);
    while allowed > 0 && allowed as f64 / n as f64 > max_fpr {
        allowed -= 1;
    }
    while allowed + 1 < n && (allowed + 1) as f64 / n as f64 <= max_fpr {
        allowed += 1;
    }
    Ok(Threshold {
        theta: sorted[n - 1 - allowed],
        max_fpr,
        calibration_size: n,
    })
}
