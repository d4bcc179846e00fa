//! Targeted Jacobian-saliency attack on softmax confidences, one feature per step.

use super::{check_image, AttackError};
use crate::models::{as_batch, DifferentiableClassifier};
use crate::numcore::{argmax, Tape, Tensor};

/// Saliency of every input feature for pushing `x` toward `target` when
/// features move in the direction of `sign(theta)`.
///
/// With `a = d p_target / d x_i` and `b = sum_{j != target} d p_j / d x_i`
/// (both multiplied by that direction), the score is `a * |b|` when `a > 0`
/// and `b < 0`, and zero otherwise.
pub fn jsma_saliency<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    target: usize,
    direction: f32,
) -> Result<Vec<f32>, AttackError> {
    let k = model.num_classes();
    let mut tape = Tape::new();
    let xv = tape.leaf(as_batch(x, model.input_shape())?, true)?;
    let logits = model.record_logits(&mut tape, xv)?;
    let probs = tape.softmax(logits)?;
    let mut one_hot = Tensor::zeros(&[1, k]);
    one_hot.data_mut()[target] = 1.0;
    let rest = one_hot.map(|v| 1.0 - v);
    let toward = tape.vjp(probs, one_hot)?;
    let away = tape.vjp(probs, rest)?;
    let zeros = Tensor::zeros(x.shape());
    let a = toward.get(xv).unwrap_or(&zeros);
    let b = away.get(xv).unwrap_or(&zeros);
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&a, &b)| {
            let (a, b) = (a * direction, b * direction);
            if a > 0.0 && b < 0.0 {
                a * b.abs()
            } else {
                0.0
            }
        })
        .collect())
}

/// Repeatedly moves the most salient feature by `theta` (clipped to `[0, 1]`)
/// until `model` predicts `target` or `ceil(gamma * d)` distinct features have
/// been modified. Once the budget is used up only already-modified features
/// remain eligible.
pub fn jsma<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    target: usize,
    theta: f32,
    gamma: f32,
) -> Result<Tensor, AttackError> {
    if theta == 0.0 || !theta.is_finite() || !(0.0..=1.0).contains(&gamma) {
        return Err(AttackError::InvalidParameter(format!(
            "theta {theta}, gamma {gamma}"
        )));
    }
    check_image(model, x)?;
    if target >= model.num_classes() {
        return Err(AttackError::InvalidParameter(format!(
            "target class {target}"
        )));
    }
    let d = x.len();
    let budget = (gamma as f64 * d as f64).ceil() as usize;
    let direction = theta.signum();
    let limit = if direction > 0.0 { 1.0 } else { 0.0 };
    let mut cur = x.clone();
    let mut modified = vec![false; d];
    let mut used = 0usize;
    // Each step moves one feature by |theta| toward its limit, so this bounds the loop.
    let max_steps = budget * ((1.0 / theta.abs()).ceil() as usize + 1);
    for _ in 0..max_steps {
        if budget == 0 || argmax(model.logits(&cur)?.data()) == target {
            break;
        }
        let saliency = jsma_saliency(model, &cur, target, direction)?;
        let mut best: Option<usize> = None;
        for (i, &s) in saliency.iter().enumerate() {
            let eligible = cur.data()[i] != limit && (used < budget || modified[i]);
            if eligible && s > 0.0 && best.map_or(true, |b| s > saliency[b]) {
                best = Some(i);
            }
        }
        let i = best.ok_or(AttackError::NoSalientFeature)?;
        if !modified[i] {
            modified[i] = true;
            used += 1;
        }
        let v = &mut cur.data_mut()[i];
        *v = (*v + theta).clamp(0.0, 1.0);
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::super::toy::LinearModel;
    use super::*;
    use crate::numcore::softmax;

    fn toy() -> LinearModel {
        LinearModel::new(
            [1, 1, 3],
            vec![1.0, -0.5, 0.2, -0.3, 0.8, 0.6, 0.4, 0.1, -0.9],
            vec![0.1, 0.0, -0.2],
        )
    }

    fn probs(m: &LinearModel, x: &[f64]) -> Vec<f64> {
        let w = m.weight.data();
        let logits: Vec<f32> = (0..3)
            .map(|k| {
                (m.bias.data()[k] as f64 + (0..3).map(|i| w[k * 3 + i] as f64 * x[i]).sum::<f64>())
                    as f32
            })
            .collect();
        softmax(&logits).into_iter().map(|p| p as f64).collect()
    }

    #[test]
    fn saliency_matches_exhaustive_jacobian() {
        let m = toy();
        let x = [0.3, 0.6, 0.4];
        let target = 1;
        // Jacobian of the confidences by central differences, one column per feature
        let h = 1e-3;
        let mut oracle = [0.0f64; 3];
        for i in 0..3 {
            let (mut up, mut down) = (x, x);
            up[i] += h;
            down[i] -= h;
            let (pu, pd) = (probs(&m, &up), probs(&m, &down));
            let col: Vec<f64> = (0..3).map(|k| (pu[k] - pd[k]) / (2.0 * h)).collect();
            let a = col[target];
            let b: f64 = (0..3).filter(|&k| k != target).map(|k| col[k]).sum();
            oracle[i] = if a > 0.0 && b < 0.0 { a * b.abs() } else { 0.0 };
        }
        let xt = Tensor::new(vec![1, 1, 3], x.iter().map(|&v| v as f32).collect()).unwrap();
        let got = jsma_saliency(&m, &xt, target, 1.0).unwrap();
        for i in 0..3 {
            assert!(
                (got[i] as f64 - oracle[i]).abs() <= 1e-4,
                "feature {i}: {} vs {}",
                got[i],
                oracle[i]
            );
        }
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..3).collect();
            idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap());
            idx
        };
        let got64: Vec<f64> = got.iter().map(|&v| v as f64).collect();
        assert_eq!(rank(&got64), rank(&oracle));
    }

    #[test]
    fn zero_budget_leaves_input_unchanged() {
        let x = Tensor::new(vec![1, 1, 3], vec![0.3, 0.6, 0.4]).unwrap();
        assert_eq!(jsma(&toy(), &x, 1, 0.25, 0.0).unwrap(), x);
    }

    #[test]
    fn respects_feature_budget_and_box() {
        let m = LinearModel::new(
            [1, 1, 6],
            (0..12).map(|i| ((i * 7 % 5) as f32 - 2.0) * 0.1).collect(),
            vec![0.5, -0.5],
        );
        let x = Tensor::new(vec![1, 1, 6], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let adv = match jsma(&m, &x, 1, 0.25, 0.34) {
            Ok(a) => a,
            Err(AttackError::NoSalientFeature) => return,
            Err(e) => panic!("{e}"),
        };
        let changed = adv
            .data()
            .iter()
            .zip(x.data())
            .filter(|(a, b)| a != b)
            .count();
        assert!(changed <= 3, "{changed} features changed");
        assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
