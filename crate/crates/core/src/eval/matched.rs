//! Benign controls with the same perturbation entries as a malicious sample.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::numcore::Tensor;

/// The entries of `eta` in a seeded uniformly random order.
pub fn permute_perturbation(eta: &Tensor, seed: u64) -> Tensor {
    let mut data = eta.data().to_vec();
    data.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Tensor::new(eta.shape().to_vec(), data).expect("same shape")
}

/// `clip(x_nat + permute(eta_mal))`: a benign input whose pre-clip
/// perturbation has exactly the entries, and so every norm, of `eta_mal`.
pub fn matched_norm_benign(
    x_nat: &Tensor,
    eta_mal: &Tensor,
    seed: u64,
) -> Result<Tensor, EvalError> {
    if x_nat.shape() != eta_mal.shape() {
        return Err(EvalError::InvalidInput(format!(
            "image {:?} and perturbation {:?}",
            x_nat.shape(),
            eta_mal.shape()
        )));
    }
    let permuted = permute_perturbation(eta_mal, seed);
    Ok(x_nat.zip_map(&permuted, |x, e| (x + e).clamp(0.0, 1.0))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_perturbations() {
        let x = Tensor::new(vec![1, 2, 2], vec![0.1, 0.5, 0.9, 0.3]).unwrap();
        assert_eq!(
            matched_norm_benign(&x, &Tensor::zeros(&[1, 2, 2]), 4).unwrap(),
            x
        );
        let eta = Tensor::full(&[1, 2, 2], 0.05);
        let x_mal = x.zip_map(&eta, |a, b| (a + b).clamp(0.0, 1.0)).unwrap();
        assert_eq!(matched_norm_benign(&x, &eta, 4).unwrap(), x_mal);
    }
}
