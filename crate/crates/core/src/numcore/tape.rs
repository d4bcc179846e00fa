//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the inputs it
//! read. Node indices are assigned in execution order, so walking the tape
//! backwards is a reverse topological traversal.

use super::kernels::{self, ConvGeom};
use super::tensor::{pairwise_sum, softmax_rows, Tensor};
use super::NumError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Convolution hyper-parameters shared by forward and transposed convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/cols appended to a transposed convolution's output.
    pub output_pad: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self {
            stride,
            pad,
            output_pad: 0,
        }
    }

    pub fn with_output_pad(mut self, output_pad: usize) -> Self {
        self.output_pad = output_pad;
        self
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Pick(Var, usize),
    Softmax(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
    Mse {
        a: Var,
        target: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by a backward pass, indexed by tape variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_finite(op: &'static str, data: &[f32]) -> Result<(), NumError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumError::NonFinite(op))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are only produced for leaves created with
    /// `requires_grad = true` and for nodes that depend on them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var, NumError> {
        check_finite("leaf", value.data())?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, NumError> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn emit(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var, NumError> {
        check_finite(name, &data)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<(), NumError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(())
        } else {
            Err(NumError::Shape(format!("operands {sa:?} and {sb:?}")))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let shape = out.shape().to_vec();
        self.emit("add", shape, out.into_data(), Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let shape = out.shape().to_vec();
        self.emit("sub", shape, out.into_data(), Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let shape = out.shape().to_vec();
        self.emit("mul", shape, out.into_data(), Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| x * factor);
        let shape = out.shape().to_vec();
        self.emit("scale", shape, out.into_data(), Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let shape = out.shape().to_vec();
        self.emit("relu", shape, out.into_data(), Op::Relu(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        let out = self.value(a).reshape(shape)?;
        self.emit(
            "reshape",
            shape.to_vec(),
            out.into_data(),
            Op::Reshape(a),
            &[a],
        )
    }

    /// Collapses every axis after the first: `[n, ...] -> [n, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var, NumError> {
        let shape = self.value(a).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(a, &[n, rest])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let s = self.value(a).sum();
        self.emit("sum", vec![1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        let t = self.value(a);
        let s = t.sum() / t.len() as f32;
        self.emit("mean", vec![1], vec![s], Op::Mean(a), &[a])
    }

    /// Selects one element (flat index) as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, NumError> {
        let t = self.value(a);
        let v = *t
            .data()
            .get(index)
            .ok_or_else(|| NumError::Shape(format!("pick index {index} out of {}", t.len())))?;
        self.emit("pick", vec![1], vec![v], Op::Pick(a, index), &[a])
    }

    /// Softmax over the trailing axis of a `[n, k]` tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(NumError::Shape(format!(
                "softmax expects [n, k], got {:?}",
                t.shape()
            )));
        }
        let k = t.shape()[1];
        let shape = t.shape().to_vec();
        let out = softmax_rows(t.data(), k);
        self.emit("softmax", shape, out, Op::Softmax(a), &[a])
    }

    /// `y = x w^T + b` for `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumError> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(NumError::Shape(format!(
                "linear x {xs:?} w {ws:?} b {bs:?}"
            )));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0f32; n * dout];
        {
            let (xv, wv, bv) = (
                self.value(x).data(),
                self.value(w).data(),
                self.value(b).data(),
            );
            kernels::matmul_nt_acc(xv, wv, n, din, dout, &mut out);
            for row in out.chunks_mut(dout) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        self.emit(
            "linear",
            vec![n, dout],
            out,
            Op::Linear { x, w, b },
            &[x, w, b],
        )
    }

    /// 2-D convolution: `x: [n, c, h, w]`, `w: [o, c, k, k]`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var, NumError> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 4
            || ws.len() != 4
            || bs.len() != 1
            || ws[1] != xs[1]
            || ws[2] != ws[3]
            || bs[0] != ws[0]
        {
            return Err(NumError::Shape(format!(
                "conv2d x {xs:?} w {ws:?} b {bs:?}"
            )));
        }
        let (n, o) = (xs[0], ws[0]);
        let geom =
            ConvGeom::conv(xs[1], xs[2], xs[3], ws[2], spec.stride, spec.pad).ok_or_else(|| {
                NumError::Shape(format!("conv2d kernel {} does not fit {xs:?}", ws[2]))
            })?;
        let spatial = geom.out_spatial();
        let mut out = vec![0.0f32; n * o * spatial];
        {
            let (xv, wv, bv) = (
                self.value(x).data(),
                self.value(w).data(),
                self.value(b).data(),
            );
            let mut cols = vec![0.0f32; geom.patch_len() * spatial];
            for i in 0..n {
                kernels::im2col(
                    &xv[i * geom.in_len()..(i + 1) * geom.in_len()],
                    &geom,
                    &mut cols,
                );
                let dst = &mut out[i * o * spatial..(i + 1) * o * spatial];
                for (ch, row) in dst.chunks_mut(spatial).enumerate() {
                    row.fill(bv[ch]);
                }
                kernels::matmul_acc(wv, &cols, o, geom.patch_len(), spatial, dst);
            }
        }
        self.emit(
            "conv2d",
            vec![n, o, geom.out_h, geom.out_w],
            out,
            Op::Conv2d { x, w, b, geom },
            &[x, w, b],
        )
    }

    /// Transposed 2-D convolution: `x: [n, c, h, w]`, `w: [c, o, k, k]`, `b: [o]`.
    ///
    /// Output size is `(h - 1) * stride - 2 * pad + k + output_pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
    ) -> Result<Var, NumError> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 4
            || ws.len() != 4
            || bs.len() != 1
            || ws[0] != xs[1]
            || ws[2] != ws[3]
            || bs[0] != ws[1]
        {
            return Err(NumError::Shape(format!(
                "conv_transpose2d x {xs:?} w {ws:?} b {bs:?}"
            )));
        }
        if spec.stride == 0 || spec.output_pad >= spec.stride.max(1) && spec.output_pad > 0 {
            return Err(NumError::Shape(format!(
                "invalid transposed conv spec {spec:?}"
            )));
        }
        let (n, c, h, wd, o, k) = (xs[0], xs[1], xs[2], xs[3], ws[1], ws[2]);
        let out_h = ((h - 1) * spec.stride + k + spec.output_pad)
            .checked_sub(2 * spec.pad)
            .filter(|&v| v > 0)
            .ok_or_else(|| NumError::Shape("transposed conv output collapses".into()))?;
        let out_w = ((wd - 1) * spec.stride + k + spec.output_pad)
            .checked_sub(2 * spec.pad)
            .filter(|&v| v > 0)
            .ok_or_else(|| NumError::Shape("transposed conv output collapses".into()))?;
        // the adjoint forward convolution maps [o, out_h, out_w] -> [c, h, w]
        let geom = ConvGeom::conv(o, out_h, out_w, k, spec.stride, spec.pad)
            .filter(|g| g.out_h == h && g.out_w == wd)
            .ok_or_else(|| NumError::Shape("inconsistent transposed conv geometry".into()))?;
        let out_len = o * out_h * out_w;
        let mut out = vec![0.0f32; n * out_len];
        {
            let (xv, wv, bv) = (
                self.value(x).data(),
                self.value(w).data(),
                self.value(b).data(),
            );
            let spatial = h * wd;
            let mut cols = vec![0.0f32; geom.patch_len() * spatial];
            for i in 0..n {
                cols.fill(0.0);
                kernels::matmul_tn_acc(
                    wv,
                    &xv[i * c * spatial..(i + 1) * c * spatial],
                    c,
                    geom.patch_len(),
                    spatial,
                    &mut cols,
                );
                let dst = &mut out[i * out_len..(i + 1) * out_len];
                for (ch, plane) in dst.chunks_mut(out_h * out_w).enumerate() {
                    plane.fill(bv[ch]);
                }
                kernels::col2im_add(&cols, &geom, dst);
            }
        }
        self.emit(
            "conv_transpose2d",
            vec![n, o, out_h, out_w],
            out,
            Op::ConvTranspose2d { x, w, b, geom },
            &[x, w, b],
        )
    }

    /// Mean softmax cross-entropy of `[n, k]` logits against integer labels.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, NumError> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(NumError::Shape(format!(
                "cross-entropy logits {:?} with {} labels",
                t.shape(),
                labels.len()
            )));
        }
        let k = t.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(NumError::Shape(format!("label {bad} out of {k} classes")));
        }
        let probs = softmax_rows(t.data(), k);
        let losses: Vec<f32> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let row = &t.data()[i * k..(i + 1) * k];
                let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
                let lse = pairwise_sum(&row.iter().map(|&v| (v - max).exp()).collect::<Vec<_>>())
                    .ln()
                    + max;
                lse - row[l]
            })
            .collect();
        let loss = pairwise_sum(&losses) / labels.len() as f32;
        self.emit(
            "softmax_cross_entropy",
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, a: Var, target: &Tensor) -> Result<Var, NumError> {
        let t = self.value(a);
        if t.shape() != target.shape() {
            return Err(NumError::Shape(format!(
                "mse {:?} vs {:?}",
                t.shape(),
                target.shape()
            )));
        }
        let sq: Vec<f32> = t
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, y)| (x - y) * (x - y))
            .collect();
        let loss = pairwise_sum(&sq) / sq.len() as f32;
        self.emit(
            "mse",
            vec![1],
            vec![loss],
            Op::Mse {
                a,
                target: target.data().to_vec(),
            },
            &[a],
        )
    }

    /// Reverse pass from a scalar loss; consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, NumError> {
        if !self.value(loss).is_scalar() {
            return Err(NumError::NotScalar(self.value(loss).shape().to_vec()));
        }
        self.vjp(loss, Tensor::ones(self.value(loss).shape()))
    }

    /// Vector-Jacobian product seeded at `output` without consuming the tape.
    pub fn vjp(&self, output: Var, seed: Tensor) -> Result<Gradients, NumError> {
        if output.0 >= self.nodes.len() {
            return Err(NumError::NotOnTape);
        }
        if seed.shape() != self.value(output).shape() {
            return Err(NumError::Shape(format!(
                "seed {:?} for output {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[output.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                check_finite("backward", g.data())?;
                debug_assert_eq!(g.shape(), self.nodes[i].value.shape());
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        data: Vec<f32>,
    ) -> Result<(), NumError> {
        if !self.wants(v) {
            return Ok(());
        }
        let shape = self.value(v).shape().to_vec();
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(&data) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(Tensor::new(shape, data)?),
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), NumError> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec())?;
                self.accumulate(grads, *b, gd.to_vec())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec())?;
                self.accumulate(grads, *b, gd.iter().map(|v| -v).collect())?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, gd.iter().zip(bv).map(|(g, y)| g * y).collect())?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, gd.iter().zip(av).map(|(g, x)| g * x).collect())?;
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, gd.iter().map(|v| v * f).collect())?,
            Op::Relu(a) => {
                let av = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(av)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, d)?;
            }
            Op::Reshape(a) => self.accumulate(grads, *a, gd.to_vec())?,
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n])?;
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0] / n as f32; n])?;
            }
            Op::Pick(a, index) => {
                let mut d = vec![0.0; self.value(*a).len()];
                d[*index] = gd[0];
                self.accumulate(grads, *a, d)?;
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let k = node.value.shape()[1];
                let mut d = vec![0.0f32; y.len()];
                for ((yr, gr), dr) in y.chunks(k).zip(gd.chunks(k)).zip(d.chunks_mut(k)) {
                    let dotp: Vec<f32> = yr.iter().zip(gr).map(|(a, b)| a * b).collect();
                    let s = pairwise_sum(&dotp);
                    for ((dd, &yy), &gg) in dr.iter_mut().zip(yr).zip(gr) {
                        *dd = yy * (gg - s);
                    }
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).shape();
                let (n, din) = (xs[0], xs[1]);
                let dout = self.value(*w).shape()[0];
                if self.wants(*x) {
                    let mut dx = vec![0.0f32; n * din];
                    kernels::matmul_acc(gd, self.value(*w).data(), n, dout, din, &mut dx);
                    self.accumulate(grads, *x, dx)?;
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0f32; dout * din];
                    kernels::matmul_tn_acc(gd, self.value(*x).data(), n, dout, din, &mut dw);
                    self.accumulate(grads, *w, dw)?;
                }
                if self.wants(*b) {
                    let db = column_sums(gd, n, dout);
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let n = self.value(*x).shape()[0];
                let o = self.value(*w).shape()[0];
                let spatial = geom.out_spatial();
                let plen = geom.patch_len();
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dx = self.wants(*x).then(|| vec![0.0f32; xv.len()]);
                let mut dw = self.wants(*w).then(|| vec![0.0f32; wv.len()]);
                let mut cols = vec![0.0f32; plen * spatial];
                let mut dcols = vec![0.0f32; plen * spatial];
                for i in 0..n {
                    let go = &gd[i * o * spatial..(i + 1) * o * spatial];
                    if let Some(dw) = dw.as_mut() {
                        kernels::im2col(
                            &xv[i * geom.in_len()..(i + 1) * geom.in_len()],
                            geom,
                            &mut cols,
                        );
                        kernels::matmul_nt_acc(go, &cols, o, spatial, plen, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        dcols.fill(0.0);
                        kernels::matmul_tn_acc(wv, go, o, plen, spatial, &mut dcols);
                        kernels::col2im_add(
                            &dcols,
                            geom,
                            &mut dx[i * geom.in_len()..(i + 1) * geom.in_len()],
                        );
                    }
                }
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx)?;
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, channel_sums(gd, n, o, spatial))?;
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let xs = self.value(*x).shape();
                let (n, c) = (xs[0], xs[1]);
                let spatial = xs[2] * xs[3];
                let o = geom.in_c;
                let out_len = geom.in_len();
                let plen = geom.patch_len();
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dx = self.wants(*x).then(|| vec![0.0f32; xv.len()]);
                let mut dw = self.wants(*w).then(|| vec![0.0f32; wv.len()]);
                let mut dcols = vec![0.0f32; plen * spatial];
                for i in 0..n {
                    kernels::im2col(&gd[i * out_len..(i + 1) * out_len], geom, &mut dcols);
                    if let Some(dx) = dx.as_mut() {
                        kernels::matmul_acc(
                            wv,
                            &dcols,
                            c,
                            plen,
                            spatial,
                            &mut dx[i * c * spatial..(i + 1) * c * spatial],
                        );
                    }
                    if let Some(dw) = dw.as_mut() {
                        kernels::matmul_nt_acc(
                            &xv[i * c * spatial..(i + 1) * c * spatial],
                            &dcols,
                            c,
                            spatial,
                            plen,
                            dw,
                        );
                    }
                }
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx)?;
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, channel_sums(gd, n, o, geom.in_h * geom.in_w))?;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.value(*logits).shape()[1];
                let scale = gd[0] / labels.len() as f32;
                let mut d = probs.clone();
                for (row, &l) in d.chunks_mut(k).zip(labels) {
                    row[l] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                self.accumulate(grads, *logits, d)?;
            }
            Op::Mse { a, target } => {
                let av = self.value(*a).data();
                let scale = 2.0 * gd[0] / av.len() as f32;
                let d = av
                    .iter()
                    .zip(target)
                    .map(|(x, t)| scale * (x - t))
                    .collect();
                self.accumulate(grads, *a, d)?;
            }
        }
        Ok(())
    }
}

fn column_sums(g: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    (0..cols)
        .map(|j| {
            let col: Vec<f32> = (0..rows).map(|i| g[i * cols + j]).collect();
            pairwise_sum(&col)
        })
        .collect()
}

fn channel_sums(g: &[f32], n: usize, channels: usize, spatial: usize) -> Vec<f32> {
    (0..channels)
        .map(|ch| {
            let per_sample: Vec<f32> = (0..n)
                .map(|i| {
                    pairwise_sum(
                        &g[(i * channels + ch) * spatial..(i * channels + ch + 1) * spatial],
                    )
                })
                .collect();
            pairwise_sum(&per_sample)
        })
        .collect()
}
