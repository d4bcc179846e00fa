//! Reconstruction-based baseline detectors: the L1 norm of the residual and
//! the Jensen-Shannon divergence between confidences before and after
//! reconstruction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::models::{as_batch, Autoencoder, Classifier};
use crate::numcore::{NumError, Tensor};

/// Floor applied inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    MagnetL1,
    MagnetJsd,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [BaselineKind::MagnetL1, BaselineKind::MagnetJsd];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::MagnetL1 => "magnet_l1",
            BaselineKind::MagnetJsd => "magnet_jsd",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sum of `|x - A(x)|` over all entries, one value per image.
pub fn magnet_l1(ae: &Autoencoder, x: &Tensor) -> Result<Vec<f64>, NumError> {
    let batch = as_batch(x, ae.spec().input_shape)?;
    let noise = ae.recon_noise(&batch)?;
    let per = noise.len() / batch.shape()[0];
    Ok(noise.data().chunks(per).map(l1).collect())
}

/// Sequential `f64` sum of absolute values.
fn l1(v: &[f32]) -> f64 {
    v.iter().map(|&a| (a as f64).abs()).sum()
}

/// `JSD(M(x), M(A(x)))` in nats, one value per image.
pub fn magnet_jsd(
    ae: &Autoencoder,
    classifier: &Classifier,
    x: &Tensor,
) -> Result<Vec<f64>, NumError> {
    let batch = as_batch(x, ae.spec().input_shape)?;
    let before = classifier.forward(&batch)?.probs;
    let after = classifier.forward(&ae.reconstruct(&batch)?)?.probs;
    let k = classifier.spec().classes;
    Ok(before
        .data()
        .chunks(k)
        .zip(after.data().chunks(k))
        .map(|(p, q)| {
            let p: Vec<f64> = p.iter().map(|&v| v as f64).collect();
            let q: Vec<f64> = q.iter().map(|&v| v as f64).collect();
            jsd(&p, &q)
        })
        .collect())
}

/// Jensen-Shannon divergence in nats, `0.5 KL(p || m) + 0.5 KL(q || m)` with
/// `m = (p + q) / 2`. Symmetric by construction and clamped to `[0, ln 2]`.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        // the two terms are added in a fixed order of (smaller, larger) so that swapping p and q is exact
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        total += 0.5 * (kl_term(lo, m) + kl_term(hi, m));
    }
    total.clamp(0.0, std::f64::consts::LN_2)
}

fn kl_term(a: f64, m: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else {
        a * (a.max(LOG_FLOOR).ln() - m.max(LOG_FLOOR).ln())
    }
}
