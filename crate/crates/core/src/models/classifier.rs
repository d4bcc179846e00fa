use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::params::{conv3_out, normal_init, ParamSet};
use super::{as_batch, DifferentiableClassifier, ModelError};
use crate::data::{ImageShape, LabeledDataset};
use crate::numcore::{argmax, softmax_rows, ConvSpec, NumError, Tape, Tensor, Var};

/// Layout of the convolutional classifier: 3x3 conv blocks (the first at
/// stride 1, the rest at stride 2), a ReLU feature layer, and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub input_shape: ImageShape,
    pub classes: usize,
    /// Width of the penultimate layer, i.e. the noise feature dimension.
    pub feature_dim: usize,
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
}

impl ClassifierSpec {
    /// Default block widths scale with the input side.
    pub fn new(input_shape: ImageShape, classes: usize, feature_dim: usize) -> Self {
        let channels = if input_shape[1].max(input_shape[2]) <= 16 {
            vec![8, 16, 32]
        } else {
            vec![16, 32, 64]
        };
        Self {
            input_shape,
            classes,
            feature_dim,
            channels,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input_shape.contains(&0) {
            return Err(ModelError::IncompatibleShape(format!(
                "{:?}",
                self.input_shape
            )));
        }
        if self.classes < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "{} classes",
                self.classes
            )));
        }
        if self.feature_dim < self.classes {
            return Err(ModelError::InvalidConfig(format!(
                "feature dimension {} is below the class count {}",
                self.feature_dim, self.classes
            )));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(ModelError::InvalidConfig(format!(
                "conv channels {:?}",
                self.channels
            )));
        }
        Ok(())
    }

    fn block_stride(i: usize) -> usize {
        if i == 0 {
            1
        } else {
            2
        }
    }

    /// Flattened length after the conv blocks.
    fn conv_output_len(&self) -> usize {
        let (mut h, mut w) = (self.input_shape[1], self.input_shape[2]);
        for i in 0..self.channels.len() {
            h = conv3_out(h, Self::block_stride(i));
            w = conv3_out(w, Self::block_stride(i));
        }
        h * w * self.channels.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    spec: ClassifierSpec,
    params: ParamSet,
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ClassifierOutput {
    pub logits: Tensor,
    /// Softmax confidences `[n, classes]`.
    pub probs: Tensor,
    /// Penultimate activations `[n, feature_dim]`.
    pub features: Tensor,
}

/// Builds an untrained classifier with He-normal weights and zero biases.
pub fn build_classifier(spec: ClassifierSpec, seed: u64) -> Result<Classifier, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut in_c = spec.input_shape[0];
    for (i, &out_c) in spec.channels.iter().enumerate() {
        params.push(
            format!("conv{i}.weight"),
            normal_init(&mut rng, &[out_c, in_c, 3, 3], in_c * 9, 2.0),
        );
        params.push(format!("conv{i}.bias"), Tensor::zeros(&[out_c]));
        in_c = out_c;
    }
    let flat = spec.conv_output_len();
    params.push(
        "feature.weight",
        normal_init(&mut rng, &[spec.feature_dim, flat], flat, 2.0),
    );
    params.push("feature.bias", Tensor::zeros(&[spec.feature_dim]));
    params.push(
        "output.weight",
        normal_init(
            &mut rng,
            &[spec.classes, spec.feature_dim],
            spec.feature_dim,
            1.0,
        ),
    );
    params.push("output.bias", Tensor::zeros(&[spec.classes]));
    Ok(Classifier { spec, params })
}

pub(crate) struct RecordedClassifier {
    #[allow(dead_code)]
    pub params: Vec<Var>,
    pub features: Var,
    pub logits: Var,
}

impl Classifier {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub(crate) fn record(
        &self,
        tape: &mut Tape,
        x: Var,
        trainable: bool,
    ) -> Result<RecordedClassifier, NumError> {
        let params = self.params.record(tape, trainable)?;
        let (features, logits) = self.record_layers(tape, x, &params)?;
        Ok(RecordedClassifier {
            params,
            features,
            logits,
        })
    }

    /// Logits computed with externally recorded parameter variables.
    pub(crate) fn record_with(
        &self,
        tape: &mut Tape,
        x: Var,
        params: &[Var],
    ) -> Result<Var, NumError> {
        Ok(self.record_layers(tape, x, params)?.1)
    }

    fn record_layers(
        &self,
        tape: &mut Tape,
        x: Var,
        params: &[Var],
    ) -> Result<(Var, Var), NumError> {
        let mut h = x;
        let blocks = self.spec.channels.len();
        for i in 0..blocks {
            let spec = ConvSpec::new(ClassifierSpec::block_stride(i), 1);
            h = tape.conv2d(h, params[2 * i], params[2 * i + 1], spec)?;
            h = tape.relu(h)?;
        }
        let h = tape.flatten(h)?;
        let f = tape.linear(h, params[2 * blocks], params[2 * blocks + 1])?;
        let features = tape.relu(f)?;
        let logits = tape.linear(features, params[2 * blocks + 2], params[2 * blocks + 3])?;
        Ok((features, logits))
    }

    /// Confidences and features of a batch (or single image) from one pass.
    pub fn forward(&self, x: &Tensor) -> Result<ClassifierOutput, NumError> {
        let batch = as_batch(x, self.spec.input_shape)?;
        let mut tape = Tape::new();
        let xv = tape.constant(batch)?;
        let rec = self.record(&mut tape, xv, false)?;
        let logits = tape.value(rec.logits).clone();
        let probs = Tensor::new(
            logits.shape().to_vec(),
            softmax_rows(logits.data(), self.spec.classes),
        )?;
        Ok(ClassifierOutput {
            logits,
            probs,
            features: tape.value(rec.features).clone(),
        })
    }

    /// Confidence vector of a single image.
    pub fn predict(&self, image: &Tensor) -> Result<Vec<f32>, NumError> {
        Ok(self.forward(image)?.probs.row(0).to_vec())
    }

    /// Penultimate feature vector of a single image.
    pub fn features(&self, image: &Tensor) -> Result<Vec<f32>, NumError> {
        Ok(self.forward(image)?.features.row(0).to_vec())
    }

    /// Applies only the output layer to feature rows `[n, feature_dim]`.
    pub fn logits_from_features(&self, features: &Tensor) -> Result<Tensor, NumError> {
        let blocks = self.spec.channels.len();
        let mut tape = Tape::new();
        let f = tape.constant(features.clone())?;
        let w = tape.constant(self.params.tensor(2 * blocks + 2).clone())?;
        let b = tape.constant(self.params.tensor(2 * blocks + 3).clone())?;
        let out = tape.linear(f, w, b)?;
        Ok(tape.value(out).clone())
    }

    /// Fraction of samples whose argmax prediction equals the label.
    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f32, NumError> {
        if ds.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        let all: Vec<usize> = (0..ds.len()).collect();
        for chunk in all.chunks(128) {
            let (x, labels) = ds.batch(chunk);
            let logits = self.logits(&x)?;
            let k = self.spec.classes;
            correct += labels
                .iter()
                .enumerate()
                .filter(|(i, &y)| argmax(&logits.data()[i * k..(i + 1) * k]) == y)
                .count();
        }
        Ok(correct as f32 / ds.len() as f32)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_ints("meta.classifier.input_shape", &self.spec.input_shape);
        ck.push_ints(
            "meta.classifier.heads",
            &[self.spec.classes, self.spec.feature_dim],
        );
        ck.push_ints("meta.classifier.channels", &self.spec.channels);
        for (n, t) in self.params.entries() {
            ck.push(n.clone(), t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let shape = ck.ints("meta.classifier.input_shape")?;
        let heads = ck.ints("meta.classifier.heads")?;
        if shape.len() != 3 || heads.len() != 2 {
            return Err(ModelError::Checkpoint(
                "malformed classifier metadata".into(),
            ));
        }
        let spec = ClassifierSpec {
            input_shape: [shape[0], shape[1], shape[2]],
            classes: heads[0],
            feature_dim: heads[1],
            channels: ck.ints("meta.classifier.channels")?,
        };
        let mut model = build_classifier(spec, 0)?;
        model.params.load_from(&ck.tensors)?;
        Ok(model)
    }
}

impl DifferentiableClassifier for Classifier {
    fn input_shape(&self) -> ImageShape {
        self.spec.input_shape
    }

    fn num_classes(&self) -> usize {
        self.spec.classes
    }

    fn record_logits(&self, tape: &mut Tape, x: Var) -> Result<Var, NumError> {
        Ok(self.record(tape, x, false)?.logits)
    }
}
