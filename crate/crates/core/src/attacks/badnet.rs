//! BadNet trigger stamping and training-set poisoning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AttackError;
use crate::data::{ImageShape, LabeledDataset};
use crate::numcore::Tensor;

/// A rectangular patch written over the image at a fixed anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    /// Patch values `[c, h, w]` in `[0, 1]`.
    pub patch: Tensor,
    pub row: usize,
    pub col: usize,
}

impl Trigger {
    pub fn new(patch: Tensor, row: usize, col: usize) -> Result<Self, AttackError> {
        if patch.rank() != 3 || patch.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(AttackError::InvalidParameter(format!(
                "trigger patch {:?} must be [c, h, w] with values in [0, 1]",
                patch.shape()
            )));
        }
        Ok(Self { patch, row, col })
    }

    /// A `size x size` yellow (R = G = 1, B = 0) square in the bottom-right corner.
    pub fn yellow_square(image: ImageShape, size: usize) -> Result<Self, AttackError> {
        let [c, h, w] = image;
        if c != 3 || size == 0 || size > h || size > w {
            return Err(AttackError::TriggerOutOfBounds {
                patch: [3, size, size],
                row: h.saturating_sub(size),
                col: w.saturating_sub(size),
                image,
            });
        }
        let mut data = vec![1.0; 2 * size * size];
        data.extend(std::iter::repeat(0.0).take(size * size));
        Self::new(Tensor::new(vec![3, size, size], data)?, h - size, w - size)
    }

    fn patch_shape(&self) -> [usize; 3] {
        let s = self.patch.shape();
        [s[0], s[1], s[2]]
    }

    fn check_fits(&self, image: ImageShape) -> Result<(), AttackError> {
        let [pc, ph, pw] = self.patch_shape();
        if pc != image[0] || self.row + ph > image[1] || self.col + pw > image[2] {
            return Err(AttackError::TriggerOutOfBounds {
                patch: [pc, ph, pw],
                row: self.row,
                col: self.col,
                image,
            });
        }
        Ok(())
    }

    fn stamp(&self, image: &mut [f32], shape: ImageShape) {
        let [pc, ph, pw] = self.patch_shape();
        let (h, w) = (shape[1], shape[2]);
        for c in 0..pc {
            for r in 0..ph {
                for q in 0..pw {
                    image[c * h * w + (self.row + r) * w + self.col + q] =
                        self.patch.data()[(c * ph + r) * pw + q];
                }
            }
        }
    }
}

/// The image with the trigger patch written over it. Idempotent.
pub fn badnet_apply(x: &Tensor, trigger: &Trigger) -> Result<Tensor, AttackError> {
    let shape: ImageShape = match x.shape() {
        &[c, h, w] => [c, h, w],
        other => {
            return Err(AttackError::InvalidParameter(format!(
                "image shape {other:?}"
            )))
        }
    };
    trigger.check_fits(shape)?;
    let mut out = x.clone();
    trigger.stamp(out.data_mut(), shape);
    Ok(out)
}

/// Stamps the trigger on `floor(rate * N)` samples chosen by a seeded shuffle
/// and relabels them as `target`. Returns the poisoned set and the chosen indices.
pub fn badnet_poison(
    ds: &LabeledDataset,
    trigger: &Trigger,
    target: usize,
    rate: f32,
    seed: u64,
) -> Result<(LabeledDataset, Vec<usize>), AttackError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(AttackError::InvalidParameter(format!("poison rate {rate}")));
    }
    if target >= ds.classes() {
        return Err(AttackError::InvalidParameter(format!(
            "target class {target}"
        )));
    }
    trigger.check_fits(ds.shape())?;
    let count = (rate as f64 * ds.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = order[..count].to_vec();
    chosen.sort_unstable();
    let mut out = ds.clone();
    for &i in &chosen {
        trigger.stamp(out.image_mut(i), ds.shape());
        out.set_label(i, target);
    }
    Ok((out, chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn dataset(n: usize) -> LabeledDataset {
        let mut ds = LabeledDataset::new([3, 4, 4], 3, Split::Train);
        for i in 0..n {
            ds.push(&vec![(i % 5) as f32 / 5.0; 48], i % 3).unwrap();
        }
        ds
    }

    #[test]
    fn yellow_square_on_black_has_norm_sqrt_eight() {
        let t = Trigger::yellow_square([3, 32, 32], 2).unwrap();
        let x = Tensor::zeros(&[3, 32, 32]);
        let xm = badnet_apply(&x, &t).unwrap();
        let eta = xm.zip_map(&x, |a, b| a - b).unwrap();
        assert_eq!(eta.l2_norm(), 8f32.sqrt());
        assert_eq!(badnet_apply(&xm, &t).unwrap(), xm);
        // stamped pixels equal the trigger, everything else untouched
        for c in 0..3 {
            for r in 0..32 {
                for q in 0..32 {
                    let v = xm.data()[c * 1024 + r * 32 + q];
                    let inside = r >= 30 && q >= 30;
                    let want = if inside && c < 2 { 1.0 } else { 0.0 };
                    assert_eq!(v, want);
                }
            }
        }
    }

    #[test]
    fn stamping_matching_pixels_is_a_no_op() {
        let t = Trigger::yellow_square([3, 4, 4], 2).unwrap();
        let x = badnet_apply(&Tensor::full(&[3, 4, 4], 0.5), &t).unwrap();
        assert_eq!(badnet_apply(&x, &t).unwrap(), x);
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        assert!(Trigger::yellow_square([3, 4, 4], 5).is_err());
        let t = Trigger::new(Tensor::ones(&[3, 2, 2]), 3, 0).unwrap();
        assert!(matches!(
            badnet_apply(&Tensor::zeros(&[3, 4, 4]), &t),
            Err(AttackError::TriggerOutOfBounds { .. })
        ));
    }

    #[test]
    fn poison_counts() {
        let ds = dataset(10);
        let t = Trigger::yellow_square([3, 4, 4], 2).unwrap();
        let (same, chosen) = badnet_poison(&ds, &t, 0, 0.05, 1).unwrap();
        assert!(chosen.is_empty());
        assert_eq!(same, ds);
        let (p, chosen) = badnet_poison(&ds, &t, 2, 0.35, 1).unwrap();
        assert_eq!(chosen.len(), 3);
        for i in 0..10 {
            let stamped = chosen.contains(&i);
            assert_eq!(
                p.label(i) == 2 && stamped || !stamped && p.label(i) == ds.label(i),
                true
            );
            assert_eq!(p.image(i) != ds.image(i), stamped);
        }
        let (all, chosen) = badnet_poison(&ds, &t, 1, 1.0, 9).unwrap();
        assert_eq!(chosen.len(), 10);
        assert!((0..10).all(|i| all.label(i) == 1));
        assert_eq!(
            badnet_poison(&ds, &t, 2, 0.35, 1).unwrap().1,
            badnet_poison(&ds, &t, 2, 0.35, 1).unwrap().1
        );
    }
}
