//! Universal perturbation built by aggregating DeepFool steps over a dataset.

use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::models::{as_batch, DifferentiableClassifier};
use crate::numcore::{argmax, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UapParams {
    /// L2 cap on each per-sample increment.
    pub step: f32,
    /// Maximum passes over the dataset.
    pub iterations: usize,
    /// L2 radius the universal perturbation is projected onto.
    pub budget: f32,
    #[serde(default = "default_overshoot")]
    pub overshoot: f32,
    /// Linearisation steps allowed per DeepFool call.
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
}

fn default_overshoot() -> f32 {
    0.02
}

fn default_inner_steps() -> usize {
    20
}

impl UapParams {
    pub fn new(step: f32, iterations: usize, budget: f32) -> Self {
        Self {
            step,
            iterations,
            budget,
            overshoot: default_overshoot(),
            inner_steps: default_inner_steps(),
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.step > 0.0)
            || !(self.budget > 0.0)
            || !(self.overshoot >= 0.0)
            || self.inner_steps == 0
        {
            return Err(AttackError::InvalidParameter(format!(
                "uap step {}, budget {}, overshoot {}, inner steps {}",
                self.step, self.budget, self.overshoot, self.inner_steps
            )));
        }
        Ok(())
    }
}

/// `clip(x + delta)` to the unit box.
pub fn apply_universal(x: &Tensor, delta: &Tensor) -> Result<Tensor, AttackError> {
    Ok(x.zip_map(delta, |a, d| (a + d).clamp(0.0, 1.0))?)
}

/// Logits and the full input Jacobian (one row per class) of a single image.
fn logits_and_jacobian<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
) -> Result<(Vec<f32>, Vec<Vec<f32>>), AttackError> {
    let k = model.num_classes();
    let mut tape = Tape::new();
    let xv = tape.leaf(as_batch(x, model.input_shape())?, true)?;
    let out = model.record_logits(&mut tape, xv)?;
    let logits = tape.value(out).data().to_vec();
    let mut rows = Vec::with_capacity(k);
    for c in 0..k {
        let mut seed = Tensor::zeros(&[1, k]);
        seed.data_mut()[c] = 1.0;
        let g = tape.vjp(out, seed)?;
        rows.push(
            g.get(xv)
                .map_or_else(|| vec![0.0; x.len()], |t| t.data().to_vec()),
        );
    }
    Ok((logits, rows))
}

/// Smallest perturbation, under successive linearisations, that moves `x`
/// across the nearest decision boundary of its current prediction, scaled by
/// `1 + overshoot`.
pub fn deepfool_step<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
    inner_steps: usize,
    overshoot: f32,
) -> Result<Tensor, AttackError> {
    let original = argmax(model.logits(x)?.data());
    let mut total = vec![0.0f32; x.len()];
    for _ in 0..inner_steps {
        let probe = apply_universal(
            x,
            &Tensor::new(
                x.shape().to_vec(),
                total.iter().map(|v| v * (1.0 + overshoot)).collect(),
            )?,
        )?;
        let (logits, jac) = logits_and_jacobian(model, &probe)?;
        if argmax(&logits) != original {
            break;
        }
        let mut nearest: Option<(f32, f32, Vec<f32>)> = None;
        for c in (0..logits.len()).filter(|&c| c != original) {
            let w: Vec<f32> = jac[c]
                .iter()
                .zip(&jac[original])
                .map(|(a, b)| a - b)
                .collect();
            let norm_sq: f32 = w.iter().map(|v| v * v).sum();
            if norm_sq == 0.0 {
                continue;
            }
            let gap = (logits[c] - logits[original]).abs();
            let dist = gap / norm_sq.sqrt();
            if nearest.as_ref().map_or(true, |(d, _, _)| dist < *d) {
                nearest = Some((dist, gap / norm_sq, w));
            }
        }
        let (_, scale, w) = nearest.ok_or(AttackError::NoBoundaryDirection)?;
        let scale = scale + 1e-4;
        for (t, wi) in total.iter_mut().zip(&w) {
            *t += scale * wi;
        }
    }
    Ok(Tensor::new(
        x.shape().to_vec(),
        total.into_iter().map(|v| v * (1.0 + overshoot)).collect(),
    )?)
}

fn l2(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

/// One perturbation for the whole set: on every sample the current `delta`
/// fails to flip, add that sample's DeepFool step (capped to `step` in L2)
/// and project back onto the `budget` ball. Stops after `iterations` passes
/// or a pass without any update.
pub fn uap<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    samples: &[Tensor],
    params: &UapParams,
) -> Result<Tensor, AttackError> {
    params.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| AttackError::InvalidParameter("empty dataset".into()))?;
    let mut delta = Tensor::zeros(first.shape());
    let clean: Vec<usize> = samples
        .iter()
        .map(|x| Ok(argmax(model.logits(x)?.data())))
        .collect::<Result<_, AttackError>>()?;
    for _ in 0..params.iterations {
        let (mut updated, mut stuck) = (false, 0usize);
        for (x, &label) in samples.iter().zip(&clean) {
            let shifted = apply_universal(x, &delta)?;
            if argmax(model.logits(&shifted)?.data()) != label {
                continue;
            }
            let r = match deepfool_step(model, &shifted, params.inner_steps, params.overshoot) {
                Ok(r) => r,
                Err(AttackError::NoBoundaryDirection) => {
                    stuck += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let norm = l2(r.data());
            let cap = if norm > params.step {
                params.step / norm
            } else {
                1.0
            };
            for (d, v) in delta.data_mut().iter_mut().zip(r.data()) {
                *d += cap * v;
            }
            let total = l2(delta.data());
            if total > params.budget {
                let s = params.budget / total;
                delta.data_mut().iter_mut().for_each(|d| *d *= s);
            }
            updated = true;
        }
        if !updated {
            if stuck > 0 {
                return Err(AttackError::NoBoundaryDirection);
            }
            break;
        }
    }
    Ok(delta)
}
