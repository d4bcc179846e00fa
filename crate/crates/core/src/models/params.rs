use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;
use crate::numcore::{NumError, Tape, Tensor, Var};

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn count_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Places every parameter on the tape, as trainable leaves or as constants.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>, NumError> {
        self.entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect()
    }

    /// Takes the named tensors, in this set's order, from checkpoint entries,
    /// checking every shape against the freshly built layout.
    pub(crate) fn load_from(&mut self, source: &[(String, Tensor)]) -> Result<(), ModelError> {
        for (name, slot) in self.entries.iter_mut() {
            let found = source
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if found.1.shape() != slot.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    found.1.shape(),
                    slot.shape()
                )));
            }
            *slot = found.1.clone();
        }
        Ok(())
    }

    pub(crate) fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }
}

/// Zero-mean normal weights with standard deviation `sqrt(gain / fan_in)`.
pub(crate) fn normal_init<R: Rng>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    gain: f32,
) -> Tensor {
    let std = (gain / fan_in.max(1) as f32).sqrt();
    let dist = Normal::new(0.0f32, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("init shape")
}

/// Output size of a 3x3 convolution with padding 1.
pub(crate) fn conv3_out(size: usize, stride: usize) -> usize {
    (size + 2 - 3) / stride + 1
}
