use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::params::{normal_init, ParamSet};
use super::{as_batch, ModelError};
use crate::data::ImageShape;
use crate::numcore::{ConvSpec, NumError, Tape, Tensor, Var};

/// Six 3x3 conv layers (`c1, c1, c2, c2, c3, c3`, downsampling by two at the
/// third and fifth), a linear bottleneck, then the mirrored decoder of a
/// linear layer and six transposed convs ending in the input channel count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSpec {
    pub input_shape: ImageShape,
    pub channels: [usize; 3],
    pub bottleneck: usize,
}

impl AutoencoderSpec {
    /// Bottleneck of one third of the input dimension.
    pub fn new(input_shape: ImageShape) -> Self {
        let channels = if input_shape[1].max(input_shape[2]) <= 16 {
            [8, 16, 32]
        } else {
            [32, 64, 128]
        };
        Self {
            input_shape,
            channels,
            bottleneck: (input_shape.iter().product::<usize>() / 3).max(1),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(ModelError::IncompatibleShape(format!(
                "autoencoder input {:?} needs positive sides divisible by 4",
                self.input_shape
            )));
        }
        if self.channels.contains(&0) || self.bottleneck == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "channels {:?}, bottleneck {}",
                self.channels, self.bottleneck
            )));
        }
        Ok(())
    }

    fn inner_shape(&self) -> [usize; 3] {
        [
            self.channels[2],
            self.input_shape[1] / 4,
            self.input_shape[2] / 4,
        ]
    }

    fn encoder_layers(&self) -> [(usize, usize, usize); 6] {
        let [c1, c2, c3] = self.channels;
        let c0 = self.input_shape[0];
        [
            (c0, c1, 1),
            (c1, c1, 1),
            (c1, c2, 2),
            (c2, c2, 1),
            (c2, c3, 2),
            (c3, c3, 1),
        ]
    }

    fn decoder_layers(&self) -> [(usize, usize, usize); 6] {
        let [c1, c2, c3] = self.channels;
        let c0 = self.input_shape[0];
        [
            (c3, c3, 1),
            (c3, c2, 2),
            (c2, c2, 1),
            (c2, c1, 2),
            (c1, c1, 1),
            (c1, c0, 1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    spec: AutoencoderSpec,
    params: ParamSet,
}

pub fn build_autoencoder(spec: AutoencoderSpec, seed: u64) -> Result<Autoencoder, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for (i, (cin, cout, _)) in spec.encoder_layers().into_iter().enumerate() {
        params.push(
            format!("enc{i}.weight"),
            normal_init(&mut rng, &[cout, cin, 3, 3], cin * 9, 2.0),
        );
        params.push(format!("enc{i}.bias"), Tensor::zeros(&[cout]));
    }
    let inner: usize = spec.inner_shape().iter().product();
    params.push(
        "bottleneck.weight",
        normal_init(&mut rng, &[spec.bottleneck, inner], inner, 1.0),
    );
    params.push("bottleneck.bias", Tensor::zeros(&[spec.bottleneck]));
    params.push(
        "expand.weight",
        normal_init(&mut rng, &[inner, spec.bottleneck], spec.bottleneck, 2.0),
    );
    params.push("expand.bias", Tensor::zeros(&[inner]));
    let last = spec.decoder_layers().len() - 1;
    for (i, (cin, cout, stride)) in spec.decoder_layers().into_iter().enumerate() {
        let gain = if i == last { 1.0 } else { 2.0 };
        let fan_in = cin * 9 / (stride * stride);
        params.push(
            format!("dec{i}.weight"),
            normal_init(&mut rng, &[cin, cout, 3, 3], fan_in, gain),
        );
        params.push(format!("dec{i}.bias"), Tensor::zeros(&[cout]));
    }
    Ok(Autoencoder { spec, params })
}

impl Autoencoder {
    pub fn spec(&self) -> &AutoencoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the unclamped reconstruction of the batch `x`; returns it with
    /// the parameter variables.
    pub(crate) fn record(
        &self,
        tape: &mut Tape,
        x: Var,
        trainable: bool,
    ) -> Result<(Var, Vec<Var>), NumError> {
        let p = self.params.record(tape, trainable)?;
        let out = self.record_with(tape, x, &p)?;
        Ok((out, p))
    }

    /// Unclamped reconstruction using externally recorded parameter variables.
    pub(crate) fn record_with(&self, tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var, NumError> {
        let mut h = x;
        let mut k = 0;
        for (_, _, stride) in self.spec.encoder_layers() {
            h = tape.conv2d(h, p[k], p[k + 1], ConvSpec::new(stride, 1))?;
            h = tape.relu(h)?;
            k += 2;
        }
        let n = tape.value(x).shape()[0];
        let h = tape.flatten(h)?;
        let code = tape.linear(h, p[k], p[k + 1])?;
        let h = tape.linear(code, p[k + 2], p[k + 3])?;
        let h = tape.relu(h)?;
        let [ic, ih, iw] = self.spec.inner_shape();
        let mut h = tape.reshape(h, &[n, ic, ih, iw])?;
        k += 4;
        let layers = self.spec.decoder_layers();
        for (i, (_, _, stride)) in layers.iter().enumerate() {
            let spec = ConvSpec::new(*stride, 1).with_output_pad(*stride - 1);
            h = tape.conv_transpose2d(h, p[k], p[k + 1], spec)?;
            if i + 1 < layers.len() {
                h = tape.relu(h)?;
            }
            k += 2;
        }
        Ok(h)
    }

    /// `A(x)` clamped to `[0, 1]`, for a single image or a batch; keeps the input's shape.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor, NumError> {
        Ok(self.decompose(x)?.0)
    }

    /// Reconstruction noise `x - A(x)`, not clamped.
    pub fn recon_noise(&self, x: &Tensor) -> Result<Tensor, NumError> {
        Ok(self.decompose(x)?.1)
    }

    /// `(x_hat, noise)` with `x_hat + noise == x` bit for bit in `f32`.
    pub fn decompose(&self, x: &Tensor) -> Result<(Tensor, Tensor), NumError> {
        let batch = as_batch(x, self.spec.input_shape)?;
        let mut tape = Tape::new();
        let xv = tape.constant(batch)?;
        let (out, _) = self.record(&mut tape, xv, false)?;
        let (rec, noise): (Vec<f32>, Vec<f32>) = x
            .data()
            .iter()
            .zip(tape.value(out).data())
            .map(|(&xi, &ri)| exact_split(xi, ri))
            .unzip();
        Ok((
            Tensor::new(x.shape().to_vec(), rec)?,
            Tensor::new(x.shape().to_vec(), noise)?,
        ))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_ints("meta.autoencoder.input_shape", &self.spec.input_shape);
        ck.push_ints("meta.autoencoder.channels", &self.spec.channels);
        ck.push_ints("meta.autoencoder.bottleneck", &[self.spec.bottleneck]);
        for (n, t) in self.params.entries() {
            ck.push(n.clone(), t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let shape = ck.ints("meta.autoencoder.input_shape")?;
        let ch = ck.ints("meta.autoencoder.channels")?;
        let b = ck.ints("meta.autoencoder.bottleneck")?;
        if shape.len() != 3 || ch.len() != 3 || b.len() != 1 {
            return Err(ModelError::Checkpoint(
                "malformed autoencoder metadata".into(),
            ));
        }
        let spec = AutoencoderSpec {
            input_shape: [shape[0], shape[1], shape[2]],
            channels: [ch[0], ch[1], ch[2]],
            bottleneck: b[0],
        };
        let mut model = build_autoencoder(spec, 0)?;
        model.params.load_from(&ck.tensors)?;
        Ok(model)
    }
}

/// Splits `x` into a reconstruction near `clamp(raw, 0, 1)` and a residual
/// whose `f32` sum is exactly `x`. Plain `x - r` can lose the identity to
/// rounding, so the reconstruction is first nudged by single ulps; if that
/// fails (it is pinned at a box bound, or `x` is tiny next to it) the gap to
/// `x` is halved until the subtraction becomes exact.
fn exact_split(x: f32, raw: f32) -> (f32, f32) {
    let mut rec = raw.clamp(0.0, 1.0);
    let mut noise = x - rec;
    for _ in 0..8 {
        if rec + noise == x {
            return (rec, noise);
        }
        rec = if rec + noise < x {
            rec.next_up()
        } else {
            rec.next_down()
        }
        .clamp(0.0, 1.0);
        if rec + noise == x {
            return (rec, noise);
        }
        noise = x - rec;
    }
    while rec + noise != x {
        rec = x + (rec - x) * 0.5;
        noise = x - rec;
    }
    (rec, noise)
}
