//! Sign-gradient attacks under an L-infinity budget.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_image, AttackError};
use crate::models::{as_batch, DifferentiableClassifier};
use crate::numcore::{sign, Tape, Tensor};

/// Cross-entropy loss of the true label and its gradient with respect to the image.
pub fn input_gradient<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    label: usize,
) -> Result<(f32, Tensor), AttackError> {
    let mut tape = Tape::new();
    let xv = tape.leaf(as_batch(x, model.input_shape())?, true)?;
    let logits = model.record_logits(&mut tape, xv)?;
    let loss = tape.softmax_cross_entropy(logits, &[label])?;
    let value = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    let g = grads.take(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
    Ok((value, g.reshape(x.shape())?))
}

/// Projects `candidate` onto the intersection of the L-infinity ball of
/// radius `eps` around `center` and the `[0, 1]` box. The bound holds exactly
/// in `f32`: any coordinate whose rounded distance still exceeds `eps` is
/// moved toward the center one ulp at a time.
pub fn project_linf(center: &[f32], candidate: &mut [f32], eps: f32) {
    for (v, &x) in candidate.iter_mut().zip(center) {
        let mut p = v.clamp(x - eps, x + eps).clamp(0.0, 1.0);
        while (p - x).abs() > eps {
            p = if p > x { p.next_down() } else { p.next_up() };
        }
        *v = p;
    }
}

/// Single step `clip(x + eps * sign(grad))`.
pub fn fgsm<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    label: usize,
    eps: f32,
) -> Result<Tensor, AttackError> {
    if !(eps >= 0.0) {
        return Err(AttackError::InvalidParameter(format!("epsilon {eps}")));
    }
    check_image(model, x)?;
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let (_, g) = input_gradient(model, x, label)?;
    let mut out: Vec<f32> = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &d)| v + eps * sign(d))
        .collect();
    project_linf(x.data(), &mut out, eps);
    Ok(Tensor::new(x.shape().to_vec(), out)?)
}

/// Iterated sign steps of size `alpha`, clipped to the `eps` ball after each.
pub fn bim<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    label: usize,
    eps: f32,
    alpha: f32,
    iterations: usize,
) -> Result<Tensor, AttackError> {
    iterate(model, x, label, eps, alpha, iterations, x.clone())
}

/// Projected gradient ascent; with `random_start` the first iterate is drawn
/// uniformly from the `eps` ball (then clipped to the box).
#[allow(clippy::too_many_arguments)]
pub fn pgd<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    label: usize,
    eps: f32,
    alpha: f32,
    iterations: usize,
    random_start: bool,
    seed: u64,
) -> Result<Tensor, AttackError> {
    let mut start = x.clone();
    if random_start && eps > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in start.data_mut() {
            *v += rng.gen_range(-eps..=eps);
        }
        project_linf(x.data(), start.data_mut(), eps);
    }
    iterate(model, x, label, eps, alpha, iterations, start)
}

fn iterate<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    label: usize,
    eps: f32,
    alpha: f32,
    iterations: usize,
    start: Tensor,
) -> Result<Tensor, AttackError> {
    if !(eps >= 0.0) || !(alpha > 0.0) {
        return Err(AttackError::InvalidParameter(format!(
            "epsilon {eps}, alpha {alpha}"
        )));
    }
    check_image(model, x)?;
    let mut cur = start;
    for _ in 0..iterations {
        let (_, g) = input_gradient(model, &cur, label)?;
        for (v, &d) in cur.data_mut().iter_mut().zip(g.data()) {
            *v += alpha * sign(d);
        }
        project_linf(x.data(), cur.data_mut(), eps);
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::super::toy::LinearModel;
    use super::*;

    /// Two inputs, two classes; the loss gradient for label 1 is `p0 * [2, -3]`.
    fn toy() -> LinearModel {
        LinearModel::new([1, 1, 2], vec![2.0, -3.0, 0.0, 0.0], vec![0.0, 0.0])
    }

    #[test]
    fn fgsm_toy_matches_hand_evaluation() {
        let x = Tensor::new(vec![1, 1, 2], vec![0.5, 0.5]).unwrap();
        let (_, g) = input_gradient(&toy(), &x, 1).unwrap();
        assert!(g.data()[0] > 0.0 && g.data()[1] < 0.0);
        let adv = fgsm(&toy(), &x, 1, 0.1).unwrap();
        assert!((adv.data()[0] - 0.6).abs() <= 1e-6);
        assert!((adv.data()[1] - 0.4).abs() <= 1e-6);
        assert_eq!(fgsm(&toy(), &x, 1, 0.0).unwrap(), x);
    }

    #[test]
    fn projection_is_exact_and_boxed() {
        let center = [0.0, 0.3, 0.7, 1.0, 0.123_456_7];
        let mut cand = [-1.0, 0.9, 0.1, 2.0, 0.2];
        project_linf(&center, &mut cand, 0.1);
        for (&c, &v) in center.iter().zip(&cand) {
            assert!((v - c).abs() <= 0.1);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn bim_degenerate_cases() {
        let m = toy();
        let x = Tensor::new(vec![1, 1, 2], vec![0.2, 0.9]).unwrap();
        assert_eq!(bim(&m, &x, 1, 0.05, 0.01, 0).unwrap(), x);
        assert_eq!(
            bim(&m, &x, 1, 0.05, 0.2, 1).unwrap(),
            fgsm(&m, &x, 1, 0.05).unwrap()
        );
        assert_eq!(
            pgd(&m, &x, 1, 0.05, 0.01, 7, false, 3).unwrap(),
            bim(&m, &x, 1, 0.05, 0.01, 7).unwrap()
        );
    }

    #[test]
    fn pgd_ascent_is_monotone_and_reaches_the_ball_corner() {
        // Two-class linear model: the loss of label 0 grows with the logit gap
        // (w1 - w0) . x, and every sign step widens it.
        let m = LinearModel::new(
            [1, 1, 3],
            vec![1.0, -2.0, 0.5, -1.0, 1.0, 0.0],
            vec![0.0, 0.1],
        );
        let x = Tensor::new(vec![1, 1, 3], vec![0.5, 0.5, 0.5]).unwrap();
        let mut prev = input_gradient(&m, &x, 0).unwrap().0;
        for it in 1..10 {
            let adv = pgd(&m, &x, 0, 0.2, 0.03, it, false, 0).unwrap();
            let loss = input_gradient(&m, &adv, 0).unwrap().0;
            assert!(loss >= prev, "iteration {it}: {loss} < {prev}");
            prev = loss;
        }
        // closed form: the maximiser over the ball is x + eps * sign(w1 - w0)
        let adv = pgd(&m, &x, 0, 0.2, 0.03, 20, false, 0).unwrap();
        for (v, expect) in adv.data().iter().zip([0.3, 0.7, 0.3]) {
            assert!((v - expect).abs() <= 1e-6, "{v} vs {expect}");
        }
    }
}
