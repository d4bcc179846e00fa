//! Targeted L2 Carlini-Wagner attack solved by projected gradient descent on
//! the perturbation, with a single trade-off constant.

use serde::{Deserialize, Serialize};

use super::{check_image, AttackError};
use crate::models::{as_batch, DifferentiableClassifier};
use crate::numcore::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwParams {
    /// Weight of the classification term against the L2 distortion.
    pub c: f32,
    /// Confidence margin demanded of the target logit.
    pub kappa: f32,
    pub steps: usize,
    pub learning_rate: f32,
}

/// Largest non-target logit and its index.
fn runner_up(logits: &[f32], target: usize) -> (usize, f32) {
    logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .fold((usize::MAX, f32::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
}

fn margin_term(logits: &[f32], target: usize, kappa: f32) -> f32 {
    (runner_up(logits, target).1 - logits[target]).max(-kappa)
}

/// `||x_adv - x||_2 + c * max(max_{i != t} Z_i(x_adv) - Z_t(x_adv), -kappa)` on logits `Z`.
pub fn cw_objective<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    x_adv: &Tensor,
    target: usize,
    c: f32,
    kappa: f32,
) -> Result<f32, AttackError> {
    let dist = x_adv.zip_map(x, |a, b| a - b)?.l2_norm();
    let logits = model.logits(x_adv)?;
    Ok(dist + c * margin_term(logits.data(), target, kappa))
}

/// Minimises the objective over `x_adv` in `[0, 1]^d`, returning the iterate
/// (the starting point included) with the smallest objective value.
pub fn cw<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    target: usize,
    params: &CwParams,
) -> Result<Tensor, AttackError> {
    let CwParams {
        c,
        kappa,
        steps,
        learning_rate,
    } = *params;
    if !(c >= 0.0) || !(kappa >= 0.0) || !(learning_rate > 0.0) {
        return Err(AttackError::InvalidParameter(format!(
            "c {c}, kappa {kappa}, learning rate {learning_rate}"
        )));
    }
    check_image(model, x)?;
    let k = model.num_classes();
    if target >= k {
        return Err(AttackError::InvalidParameter(format!(
            "target class {target}"
        )));
    }
    let mut cur = x.clone();
    let mut best: Option<(f32, Tensor)> = None;
    for step in 0..=steps {
        let mut tape = Tape::new();
        let xv = tape.leaf(as_batch(&cur, model.input_shape())?, true)?;
        let out = model.record_logits(&mut tape, xv)?;
        let logits = tape.value(out).data().to_vec();
        let delta: Vec<f32> = cur
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| a - b)
            .collect();
        let dist = delta.iter().map(|v| v * v).sum::<f32>().sqrt();
        let objective = dist + c * margin_term(&logits, target, kappa);
        if !objective.is_finite() {
            return Err(AttackError::Diverged(step));
        }
        if best.as_ref().map_or(true, |(b, _)| objective < *b) {
            best = Some((objective, cur.clone()));
        }
        if step == steps {
            break;
        }
        let (other, top) = runner_up(&logits, target);
        let mut grad = vec![0.0f32; delta.len()];
        if c > 0.0 && top - logits[target] > -kappa {
            let mut seed = Tensor::zeros(&[1, k]);
            seed.data_mut()[other] = c;
            seed.data_mut()[target] = -c;
            if let Some(g) = tape.vjp(out, seed)?.get(xv) {
                grad.copy_from_slice(g.data());
            }
        }
        if dist > 0.0 {
            for (g, d) in grad.iter_mut().zip(&delta) {
                *g += d / dist;
            }
        }
        for (v, g) in cur.data_mut().iter_mut().zip(&grad) {
            *v = (*v - learning_rate * g).clamp(0.0, 1.0);
            if !v.is_finite() {
                return Err(AttackError::Diverged(step));
            }
        }
    }
    Ok(best.expect("at least one iterate").1)
}

#[cfg(test)]
mod tests {
    use super::super::toy::LinearModel;
    use super::*;

    /// One input feature; logits `[0, a x + b]`.
    fn logistic(a: f32, b: f32) -> LinearModel {
        LinearModel::new([1, 1, 1], vec![0.0, a], vec![0.0, b])
    }

    #[test]
    fn zero_tradeoff_keeps_the_input() {
        let m = logistic(4.0, -2.0);
        let x = Tensor::new(vec![1, 1, 1], vec![0.2]).unwrap();
        let p = CwParams {
            c: 0.0,
            kappa: 0.0,
            steps: 50,
            learning_rate: 0.01,
        };
        assert_eq!(cw(&m, &x, 1, &p).unwrap(), x);
    }

    #[test]
    fn converges_to_the_closed_form_crossing() {
        // the optimum sits where a (x + delta) + b = kappa, i.e. delta = (kappa - b) / a - x
        for (a, b, x0, kappa) in [
            (4.0f32, -2.0f32, 0.2f32, 0.0f32),
            (5.0, -3.0, 0.1, 0.5),
            (3.0, -1.0, 0.05, 0.2),
        ] {
            let m = logistic(a, b);
            let x = Tensor::new(vec![1, 1, 1], vec![x0]).unwrap();
            let p = CwParams {
                c: 1.0,
                kappa,
                steps: 1000,
                learning_rate: 0.002,
            };
            let adv = cw(&m, &x, 1, &p).unwrap();
            let delta = adv.data()[0] - x0;
            let expect = (kappa - b) / a - x0;
            assert!(
                (delta - expect).abs() <= 1e-2,
                "delta {delta}, expected {expect}"
            );
        }
    }

    #[test]
    fn returned_iterate_has_the_smallest_objective() {
        let m = logistic(4.0, -2.0);
        let x = Tensor::new(vec![1, 1, 1], vec![0.2]).unwrap();
        let p = CwParams {
            c: 1.0,
            kappa: 0.0,
            steps: 200,
            learning_rate: 0.05,
        };
        let best = cw_objective(&m, &x, &cw(&m, &x, 1, &p).unwrap(), 1, 1.0, 0.0).unwrap();
        // a shorter run returns one of the full run's iterates
        for steps in 0..200 {
            let shorter = cw(&m, &x, 1, &CwParams { steps, ..p }).unwrap();
            assert!(cw_objective(&m, &x, &shorter, 1, 1.0, 0.0).unwrap() >= best);
        }
    }
}
