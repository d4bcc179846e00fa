//! Detection metrics: AUROC, ROC points, two-sample KS and threshold metrics.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Floor on KS p-values before taking the logarithm.
pub const P_FLOOR: f64 = 1e-300;

const KS_TERMS: usize = 100;

fn check_scores(name: &str, s: &[f64]) -> Result<(), EvalError> {
    if s.is_empty() {
        return Err(EvalError::EmptyInput(name.to_string()));
    }
    if s.iter().any(|v| v.is_nan()) {
        return Err(EvalError::InvalidInput(format!("NaN in {name}")));
    }
    Ok(())
}

/// Counts of `(mal > ben, mal == ben)` over all pairs.
pub fn pair_counts(benign: &[f64], malicious: &[f64]) -> (u64, u64) {
    let mut sorted = benign.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut above, mut ties) = (0u64, 0u64);
    for &m in malicious {
        let lo = sorted.partition_point(|&b| b < m);
        let hi = sorted.partition_point(|&b| b <= m);
        above += lo as u64;
        ties += (hi - lo) as u64;
    }
    (above, ties)
}

/// `P(s_mal > s_ben) + P(s_mal = s_ben) / 2` over all benign/malicious pairs.
pub fn auroc(benign: &[f64], malicious: &[f64]) -> Result<f64, EvalError> {
    check_scores("benign scores", benign)?;
    check_scores("malicious scores", malicious)?;
    let (above, ties) = pair_counts(benign, malicious);
    let pairs = benign.len() as u64 * malicious.len() as u64;
    Ok((2 * above + ties) as f64 / (2 * pairs) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores strictly above this are flagged.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One ROC point per distinct score, from flagging everything down to flagging nothing.
pub fn roc_points(benign: &[f64], malicious: &[f64]) -> Result<Vec<RocPoint>, EvalError> {
    check_scores("benign scores", benign)?;
    check_scores("malicious scores", malicious)?;
    let mut all: Vec<f64> = benign.iter().chain(malicious).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut ben = benign.to_vec();
    let mut mal = malicious.to_vec();
    ben.sort_by(f64::total_cmp);
    mal.sort_by(f64::total_cmp);
    let rate = |sorted: &[f64], t: f64| {
        (sorted.len() - sorted.partition_point(|&s| s <= t)) as f64 / sorted.len() as f64
    };
    let mut points = vec![RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    }];
    points.extend(all.into_iter().map(|t| RocPoint {
        threshold: t,
        fpr: rate(&ben, t),
        tpr: rate(&mal, t),
    }));
    Ok(points)
}

/// Two-sample Kolmogorov-Smirnov statistic `max_t |F_a(t) - F_b(t)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::InvalidInput(format!(
            "KS needs two points per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_scores("first sample", a)?;
    check_scores("second sample", b)?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < na || j < nb {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < na && a[i] <= t {
            i += 1;
        }
        while j < nb && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    Ok(d)
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    if lambda < 1.18 {
        // the alternating series converges slowly here; use the dual form of the CDF
        let z = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda
            * (1..=KS_TERMS)
                .map(|j| ((2 * j - 1) as f64).powi(2) * z)
                .map(f64::exp)
                .sum::<f64>();
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for j in 1..=KS_TERMS {
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `-ln p` of the asymptotic two-sample KS test, `p` floored at [`P_FLOOR`].
pub fn ks_neglogp_1d(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    let d = ks_statistic(a, b)?;
    let n = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let p = kolmogorov_survival(d * n.sqrt()).max(P_FLOOR);
    Ok(-p.ln() + 0.0)
}

/// Per-feature `-ln p` between two sets of feature vectors (rows are samples).
pub fn ks_neglogp(a: &[Vec<f32>], b: &[Vec<f32>]) -> Result<Vec<f64>, EvalError> {
    let dim = a.first().map_or(0, Vec::len);
    if a.iter().chain(b).any(|r| r.len() != dim) {
        return Err(EvalError::InvalidInput(
            "feature vectors of different lengths".into(),
        ));
    }
    (0..dim)
        .map(|f| {
            let col = |rows: &[Vec<f32>]| rows.iter().map(|r| r[f] as f64).collect::<Vec<_>>();
            ks_neglogp_1d(&col(a), &col(b))
        })
        .collect()
}

/// Confusion counts and rates with "malicious iff score > theta".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    /// Zero when nothing is flagged.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
}

pub fn prf1_at_threshold(benign: &[f64], malicious: &[f64], theta: f64) -> Result<Prf1, EvalError> {
    if !theta.is_finite() {
        return Err(EvalError::InvalidInput(format!("threshold {theta}")));
    }
    let tp = malicious.iter().filter(|&&s| s > theta).count();
    let fp = benign.iter().filter(|&&s| s > theta).count();
    let (fn_, tn) = (malicious.len() - tp, benign.len() - fp);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf1 {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
        precision,
        recall,
        f1,
        fpr: ratio(fp, fp + tn),
    })
}
