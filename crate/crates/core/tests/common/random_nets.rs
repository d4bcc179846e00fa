//! Random small networks for checking autodiff against finite differences.
#![allow(dead_code)]

use noisec::numcore::{
    finite_diff_grad, max_relative_error, ConvSpec, NumError, Tape, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Entries smaller than this in magnitude are compared absolutely; f32 loss
/// rounding divided by 2h puts a ~1e-4 absolute floor under any estimate.
pub const REL_ERR_FLOOR: f32 = 1.0;
const STEP: f32 = 1e-3;
pub const TOLERANCE: f32 = 1e-3;
/// ReLU inputs closer than this to zero are rejected so probes never cross a kink.
const KINK_MARGIN: f32 = 2e-2;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

pub struct Net {
    pub kind: usize,
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub target: Tensor,
}

pub struct Built {
    pub loss: Var,
    pub leaves: Vec<Var>,
    pub relu_inputs: Vec<Var>,
}

impl Net {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = (seed % 4) as usize;
        let (inputs, labels, target) = match kind {
            0 => (
                vec![
                    random_tensor(&mut rng, &[2, 5], 1.0),
                    random_tensor(&mut rng, &[6, 5], 0.8),
                    random_tensor(&mut rng, &[6], 0.3),
                    random_tensor(&mut rng, &[3, 6], 0.8),
                    random_tensor(&mut rng, &[3], 0.3),
                ],
                vec![rng.gen_range(0..3), rng.gen_range(0..3)],
                Tensor::zeros(&[1]),
            ),
            1 => (
                vec![
                    random_tensor(&mut rng, &[1, 2, 5, 5], 1.0),
                    random_tensor(&mut rng, &[3, 2, 3, 3], 0.5),
                    random_tensor(&mut rng, &[3], 0.2),
                    random_tensor(&mut rng, &[2, 3, 3, 3], 0.5),
                    random_tensor(&mut rng, &[2], 0.2),
                    random_tensor(&mut rng, &[4, 18], 0.5),
                    random_tensor(&mut rng, &[4], 0.2),
                ],
                vec![rng.gen_range(0..4)],
                Tensor::zeros(&[1]),
            ),
            2 => (
                vec![
                    random_tensor(&mut rng, &[1, 2, 3, 3], 1.0),
                    random_tensor(&mut rng, &[2, 3, 3, 3], 0.5),
                    random_tensor(&mut rng, &[3], 0.2),
                    random_tensor(&mut rng, &[3, 2, 3, 3], 0.5),
                    random_tensor(&mut rng, &[2], 0.2),
                ],
                vec![],
                random_tensor(&mut rng, &[1, 2, 6, 6], 1.0),
            ),
            _ => (
                vec![
                    random_tensor(&mut rng, &[2, 4], 1.0),
                    random_tensor(&mut rng, &[2, 4], 1.0),
                    random_tensor(&mut rng, &[2, 4], 1.0),
                ],
                vec![],
                Tensor::zeros(&[1]),
            ),
        };
        Self {
            kind,
            inputs,
            labels,
            target,
        }
    }

    pub fn build(&self, tape: &mut Tape, inputs: &[Tensor]) -> Result<Built, NumError> {
        let leaves: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect::<Result<_, _>>()?;
        let mut relu_inputs = Vec::new();
        let loss = match self.kind {
            0 => {
                let h = tape.linear(leaves[0], leaves[1], leaves[2])?;
                relu_inputs.push(h);
                let h = tape.relu(h)?;
                let o = tape.linear(h, leaves[3], leaves[4])?;
                tape.softmax_cross_entropy(o, &self.labels)?
            }
            1 => {
                let h = tape.conv2d(leaves[0], leaves[1], leaves[2], ConvSpec::new(1, 1))?;
                relu_inputs.push(h);
                let h = tape.relu(h)?;
                let h = tape.conv2d(h, leaves[3], leaves[4], ConvSpec::new(2, 1))?;
                relu_inputs.push(h);
                let h = tape.relu(h)?;
                let h = tape.flatten(h)?;
                let o = tape.linear(h, leaves[5], leaves[6])?;
                tape.softmax_cross_entropy(o, &self.labels)?
            }
            2 => {
                let h = tape.conv_transpose2d(
                    leaves[0],
                    leaves[1],
                    leaves[2],
                    ConvSpec::new(2, 1).with_output_pad(1),
                )?;
                relu_inputs.push(h);
                let h = tape.relu(h)?;
                let o = tape.conv_transpose2d(h, leaves[3], leaves[4], ConvSpec::new(1, 1))?;
                tape.mse(o, &self.target)?
            }
            _ => {
                let s = tape.add(leaves[0], leaves[1])?;
                let p = tape.mul(s, leaves[2])?;
                let d = tape.sub(p, leaves[0])?;
                let sm = tape.softmax(d)?;
                let sc = tape.scale(sm, 3.0)?;
                let picked = tape.pick(sc, 5)?;
                let m = tape.mean(d)?;
                let r = tape.reshape(picked, &[1])?;
                let total = tape.add(r, m)?;
                tape.sum(total)?
            }
        };
        Ok(Built {
            loss,
            leaves,
            relu_inputs,
        })
    }

    fn loss_at(&self, inputs: &[Tensor]) -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let built = self.build(&mut tape, inputs)?;
        Ok(tape.value(built.loss).item()? as f64)
    }

    fn clear_of_kinks(&self) -> bool {
        let mut tape = Tape::new();
        let built = self.build(&mut tape, &self.inputs).unwrap();
        built
            .relu_inputs
            .iter()
            .all(|&v| tape.value(v).data().iter().all(|x| x.abs() > KINK_MARGIN))
    }
}

/// Worst relative error over every leaf of one random network.
pub fn check_network(seed: u64) -> f32 {
    let mut sub = 0u64;
    let net = loop {
        let candidate = Net::random(seed * 1000 + sub);
        if candidate.clear_of_kinks() {
            break candidate;
        }
        sub += 1;
    };
    let mut tape = Tape::new();
    let built = net.build(&mut tape, &net.inputs).unwrap();
    let grads = tape.backward(built.loss).unwrap();
    let mut worst = 0.0f32;
    for (i, leaf) in built.leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).unwrap().clone();
        let numeric = finite_diff_grad(
            |probe| {
                let mut inputs = net.inputs.clone();
                inputs[i] = probe.clone();
                net.loss_at(&inputs)
            },
            &net.inputs[i],
            STEP,
        )
        .unwrap();
        worst = worst.max(max_relative_error(&analytic, &numeric, REL_ERR_FLOOR));
    }
    worst
}
