//! Brute-force reference implementations of the evaluation metrics.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fraction of (malicious, benign) pairs ordered correctly, ties counting half.
pub fn pairwise_auroc(ben: &[f64], mal: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &m in mal {
        for &b in ben {
            twice += if m > b {
                2
            } else if m == b {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * ben.len() * mal.len()) as f64
}

fn ecdf(sample: &[f64], t: f64) -> f64 {
    sample.iter().filter(|&&v| v <= t).count() as f64 / sample.len() as f64
}

/// Largest ECDF gap, evaluated at every pooled sample point.
pub fn ecdf_scan(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .chain(b)
        .map(|&t| (ecdf(a, t) - ecdf(b, t)).abs())
        .fold(0.0, f64::max)
}

/// Uniform scores in `[-3, 3)`; `coarse` rounds them to halves so ties are common.
pub fn scores(rng: &mut ChaCha8Rng, n: usize, coarse: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(-3.0..3.0);
            if coarse {
                (v * 2.0).round()
            } else {
                v
            }
        })
        .collect()
}

/// A probability vector with some exact zeros and heavy skew.
pub fn random_distribution(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..k)
        .map(|_| {
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.0..1.0f64).powi(4)
            }
        })
        .collect();
    if p.iter().all(|&v| v == 0.0) {
        p[0] = 1.0;
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}
