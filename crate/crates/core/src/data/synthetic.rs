//! Parametric shape and texture images: one pattern family per class, with
//! random geometry, random dark background and bright foreground colors, and
//! optional Gaussian pixel noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledDataset, Split};

/// Number of distinct pattern families, hence the maximum class count.
pub const PATTERN_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    /// Standard deviation of additive pixel noise before clipping.
    #[serde(default = "default_noise")]
    pub noise: f32,
}

fn default_side() -> usize {
    16
}

fn default_noise() -> f32 {
    0.01
}

impl SyntheticSpec {
    pub fn new(classes: usize, samples: usize) -> Self {
        Self {
            classes,
            samples,
            height: default_side(),
            width: default_side(),
            noise: default_noise(),
        }
    }
}

/// Generates `spec.samples` RGB images with labels cycling through the classes.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    split: Split,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if !(2..=PATTERN_COUNT).contains(&spec.classes) {
        return Err(DataError::Malformed(format!(
            "synthetic data supports 2..={PATTERN_COUNT} classes, got {}",
            spec.classes
        )));
    }
    if spec.height < 8 || spec.width < 8 {
        return Err(DataError::Malformed(
            "synthetic images must be at least 8x8".into(),
        ));
    }
    if !(spec.noise >= 0.0) || !spec.noise.is_finite() {
        return Err(DataError::Malformed(format!("noise {}", spec.noise)));
    }
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, spec.noise.max(f32::MIN_POSITIVE)).expect("valid normal");
    let mut ds = LabeledDataset::new([3, h, w], spec.classes, split);
    let mut mask = vec![false; h * w];
    let mut image = vec![0.0f32; 3 * h * w];
    for i in 0..spec.samples {
        let label = i % spec.classes;
        draw_pattern(label, h, w, &mut rng, &mut mask);
        let bg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.35));
        let fg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.55..1.0));
        for ch in 0..3 {
            for (p, &on) in mask.iter().enumerate() {
                let base = if on { fg[ch] } else { bg[ch] };
                let jitter = if spec.noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                image[ch * h * w + p] = (base + jitter).clamp(0.0, 1.0);
            }
        }
        ds.push(&image, label)?;
    }
    Ok(ds)
}

fn draw_pattern(kind: usize, h: usize, w: usize, rng: &mut ChaCha8Rng, mask: &mut [bool]) {
    let side = h.min(w) as f32;
    let cy = h as f32 / 2.0 + rng.gen_range(-side / 8.0..side / 8.0);
    let cx = w as f32 / 2.0 + rng.gen_range(-side / 8.0..side / 8.0);
    let period = rng.gen_range(4..7) as i64;
    let phase = rng.gen_range(0..period);
    let size = rng.gen_range(0.2..0.35) * side;
    let thick = rng.gen_range(1.5..2.5f32);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f32 + 0.5 - cy, c as f32 + 0.5 - cx);
            let dist = (y * y + x * x).sqrt();
            let stripe = |t: i64| (t + phase).rem_euclid(period) < period / 2;
            mask[r * w + c] = match kind {
                0 => stripe(r as i64),
                1 => stripe(c as i64),
                2 => dist <= size,
                3 => y.abs() <= size && x.abs() <= size,
                4 => stripe(r as i64 + c as i64),
                5 => {
                    ((r as i64 + phase) / (period - 1) + (c as i64 + phase) / (period - 1)) % 2 == 0
                }
                6 => y.abs() <= thick || x.abs() <= thick,
                7 => (dist - size).abs() <= thick * 0.75,
                8 => y >= -size && y <= size && x.abs() <= (y + size) / 2.0,
                _ => stripe(r as i64 - c as i64 + 64),
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let spec = SyntheticSpec::new(4, 40);
        let a = generate_synthetic(&spec, Split::Train, 3).unwrap();
        let b = generate_synthetic(&spec, Split::Train, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        assert_eq!(a.shape(), [3, 16, 16]);
        assert!((0..40).all(|i| a.label(i) == i % 4));
        let c = generate_synthetic(&spec, Split::Train, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_pattern_has_both_colors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mask = vec![false; 256];
        for kind in 0..PATTERN_COUNT {
            for _ in 0..20 {
                draw_pattern(kind, 16, 16, &mut rng, &mut mask);
                let on = mask.iter().filter(|&&m| m).count();
                assert!(on > 4 && on < 252, "pattern {kind} covers {on} pixels");
            }
        }
    }

    #[test]
    fn rejects_bad_class_count() {
        assert!(generate_synthetic(&SyntheticSpec::new(1, 4), Split::Train, 0).is_err());
        assert!(generate_synthetic(&SyntheticSpec::new(11, 4), Split::Train, 0).is_err());
    }
}
