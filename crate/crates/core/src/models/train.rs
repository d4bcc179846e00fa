//! Minibatch SGD with a fixed learning rate and a seeded shuffle per epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::{Autoencoder, Classifier, ModelError};
use crate::data::LabeledDataset;
use crate::numcore::{argmax, NumError, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Standard deviation of the Gaussian corruption applied to autoencoder
    /// inputs, resampled for every batch. Ignored for classifiers.
    #[serde(default)]
    pub denoise_sigma: f32,
    #[serde(default)]
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum Optimizer {
    /// Fixed-rate SGD with heavy-ball momentum; 0 momentum is plain SGD.
    Sgd {
        #[serde(default)]
        momentum: f32,
    },
    /// Adam with moment decays 0.9 and 0.999.
    Adam,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: 0.0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(ModelError::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(self.denoise_sigma >= 0.0) || !self.denoise_sigma.is_finite() {
            return Err(ModelError::InvalidConfig(format!(
                "denoise sigma {}",
                self.denoise_sigma
            )));
        }
        if let Optimizer::Sgd { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(ModelError::InvalidConfig(format!("momentum {momentum}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f32>,
    /// Accuracy on each epoch's minibatches, measured before each update.
    /// Empty for autoencoders.
    pub epoch_accuracy: Vec<f32>,
    /// Training-set accuracy before the first update (classifiers only).
    pub initial_accuracy: f32,
    /// Training-set accuracy after the last update (classifiers only).
    pub final_accuracy: f32,
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

struct BatchResult {
    loss: Var,
    correct: usize,
}

fn run_sgd<F>(
    params: &mut ParamSet,
    n: usize,
    cfg: &TrainConfig,
    history: &mut TrainHistory,
    mut step: F,
) -> Result<(), ModelError>
where
    F: FnMut(&mut Tape, &[Var], &[usize], &mut ChaCha8Rng) -> Result<BatchResult, NumError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut first: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    let mut second = first.clone();
    let mut steps = 0i32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let diverged = |_| ModelError::Diverged { epoch };
            let mut tape = Tape::new();
            let vars = params.record(&mut tape, true).map_err(diverged)?;
            let res = step(&mut tape, &vars, batch, &mut rng).map_err(|e| match e {
                NumError::NonFinite(_) => ModelError::Diverged { epoch },
                other => ModelError::Num(other),
            })?;
            let loss = tape.value(res.loss).item()?;
            loss_sum += loss as f64 * batch.len() as f64;
            correct += res.correct;
            let grads = tape.backward(res.loss).map_err(diverged)?;
            steps += 1;
            let lr = cfg.learning_rate;
            let slots = params
                .tensors_mut()
                .zip(&vars)
                .zip(first.iter_mut().zip(second.iter_mut()));
            for ((t, v), (m1, m2)) in slots {
                if let Some(g) = grads.get(*v) {
                    let pairs = t
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m1.iter_mut().zip(m2.iter_mut()));
                    match cfg.optimizer {
                        Optimizer::Sgd { momentum } => pairs.for_each(|((p, &d), (m, _))| {
                            *m = momentum * *m + d;
                            *p -= lr * *m;
                        }),
                        Optimizer::Adam => {
                            let c1 = 1.0 - ADAM_BETA1.powi(steps);
                            let c2 = 1.0 - ADAM_BETA2.powi(steps);
                            pairs.for_each(|((p, &d), (m, s))| {
                                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * d;
                                *s = ADAM_BETA2 * *s + (1.0 - ADAM_BETA2) * d * d;
                                *p -= lr * (*m / c1) / ((*s / c2).sqrt() + ADAM_EPS);
                            })
                        }
                    }
                }
                if !t.is_finite() {
                    return Err(ModelError::Diverged { epoch });
                }
            }
        }
        history.epoch_loss.push((loss_sum / n as f64) as f32);
        history.epoch_accuracy.push(correct as f32 / n as f32);
    }
    Ok(())
}

/// Trains with softmax cross-entropy; returns the model with its history.
pub fn train_classifier(
    mut model: Classifier,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainHistory), ModelError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if ds.shape() != model.spec().input_shape || ds.classes() > model.spec().classes {
        return Err(ModelError::IncompatibleShape(format!(
            "dataset {:?} with {} classes for classifier {:?} with {}",
            ds.shape(),
            ds.classes(),
            model.spec().input_shape,
            model.spec().classes
        )));
    }
    let mut history = TrainHistory {
        initial_accuracy: model.accuracy(ds)?,
        ..Default::default()
    };
    let frozen = model.clone();
    let classes = model.spec().classes;
    run_sgd(
        model.params_mut(),
        ds.len(),
        cfg,
        &mut history,
        |tape, vars, batch, _| {
            let (x, labels) = ds.batch(batch);
            let xv = tape.constant(x)?;
            let logits = frozen.record_with(tape, xv, vars)?;
            let values = tape.value(logits).data();
            let correct = labels
                .iter()
                .enumerate()
                .filter(|(i, &y)| argmax(&values[i * classes..(i + 1) * classes]) == y)
                .count();
            Ok(BatchResult {
                loss: tape.softmax_cross_entropy(logits, &labels)?,
                correct,
            })
        },
    )?;
    history.final_accuracy = model.accuracy(ds)?;
    Ok((model, history))
}

/// Trains `A` to map `x + N(0, sigma^2)` back to `x` under mean squared error.
pub fn train_autoencoder(
    mut model: Autoencoder,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Autoencoder, TrainHistory), ModelError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if ds.shape() != model.spec().input_shape {
        return Err(ModelError::IncompatibleShape(format!(
            "dataset {:?} for autoencoder {:?}",
            ds.shape(),
            model.spec().input_shape
        )));
    }
    let noise =
        Normal::new(0.0f32, cfg.denoise_sigma.max(f32::MIN_POSITIVE)).expect("valid normal");
    let frozen = model.clone();
    let mut history = TrainHistory::default();
    run_sgd(
        model.params_mut(),
        ds.len(),
        cfg,
        &mut history,
        |tape, vars, batch, rng| {
            let (clean, _) = ds.batch(batch);
            let corrupted = if cfg.denoise_sigma > 0.0 {
                let mut c = clean.clone();
                for v in c.data_mut() {
                    *v += noise.sample(rng);
                }
                c
            } else {
                clean.clone()
            };
            let xv = tape.constant(corrupted)?;
            let out = frozen.record_with(tape, xv, vars)?;
            Ok(BatchResult {
                loss: tape.mse(out, &clean)?,
                correct: 0,
            })
        },
    )?;
    history.epoch_accuracy.clear();
    Ok((model, history))
}
