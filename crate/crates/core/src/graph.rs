//! Reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: adding an operation runs its forward pass
//! immediately and caches the output, so node construction order is the
//! topological order. [`Graph::backward`] walks the tape in reverse and
//! fills a gradient tensor for every node, including the input leaves —
//! that input gradient is what the attack code consumes.
//!
//! Convolutions lower to im2col + GEMM; the column buffers are kept on the
//! node for the backward pass.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{gemm, gemm_acc, transpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: NodeId, kernel: NodeId, bias: NodeId },
    MaxPool2x2 { input: NodeId },
    Dense { input: NodeId, weight: NodeId, bias: NodeId },
    Relu { input: NodeId },
    Flatten { input: NodeId },
    Sum { input: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<u8> },
}

/// Per-op state saved by forward for the backward rules.
#[derive(Debug)]
enum Aux {
    None,
    /// Batched im2col buffer, [C*kh*kw, N*OH*OW] with per-image column
    /// blocks.
    Conv { cols: Vec<f64> },
    /// Flat input index of the window max, per output element.
    Pool { argmax: Vec<usize> },
    /// Row-wise softmax of the (shifted) logits.
    Softmax { probs: Vec<f64> },
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Shared(Arc<Tensor>),
}

impl Value {
    fn tensor(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Shared(t) => t,
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Value,
    aux: Aux,
}

/// Tape of operations with cached outputs and, after `backward`, cached
/// gradients. Single-threaded by design; run one graph per thread and share
/// parameters through `Arc`.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Value, aux: Aux) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, aux });
        self.grads.push(None);
        id
    }

    /// Owned leaf (network input, labels-as-data, ...).
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, Value::Owned(t), Aux::None)
    }

    /// Shared leaf; parameters live outside the graph and many graphs may
    /// reference them concurrently for reading.
    pub fn param(&mut self, t: Arc<Tensor>) -> NodeId {
        self.push(Op::Leaf, Value::Shared(t), Aux::None)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.tensor()
    }

    /// Gradient of the last backward's loss w.r.t. this node.
    pub fn grad(&self, id: NodeId) -> Result<&Tensor> {
        if !self.backward_done {
            return Err(Error::State(
                "gradient requested before backward() ran".into(),
            ));
        }
        self.grads[id.0]
            .as_ref()
            .ok_or_else(|| Error::State("node has no gradient".into()))
    }

    /// Replace an input leaf's value (same shape) and recompute the tape.
    pub fn set_input(&mut self, id: NodeId, t: Tensor) -> Result<()> {
        match &mut self.nodes[id.0] {
            Node { op: Op::Leaf, value: Value::Owned(old), .. } => {
                if old.shape() != t.shape() {
                    return Err(Error::Contract(format!(
                        "set_input shape {:?} does not match leaf shape {:?}",
                        t.shape(),
                        old.shape()
                    )));
                }
                *old = t;
            }
            Node { op: Op::Leaf, .. } => {
                return Err(Error::Contract("cannot set a shared parameter leaf".into()))
            }
            _ => return Err(Error::Contract("set_input target is not a leaf".into())),
        }
        self.refresh();
        Ok(())
    }

    /// Recompute every cached output in tape order and drop stale gradients.
    pub fn refresh(&mut self) {
        for i in 0..self.nodes.len() {
            let (value, aux) = match &self.nodes[i].op {
                Op::Leaf => continue,
                Op::Conv2d { input, kernel, bias } => {
                    let (v, a) = conv2d_forward(
                        self.value(*input),
                        self.value(*kernel),
                        self.value(*bias),
                    );
                    (v, a)
                }
                Op::MaxPool2x2 { input } => maxpool_forward(self.value(*input)),
                Op::Dense { input, weight, bias } => (
                    dense_forward(self.value(*input), self.value(*weight), self.value(*bias)),
                    Aux::None,
                ),
                Op::Relu { input } => (relu_forward(self.value(*input)), Aux::None),
                Op::Flatten { input } => (flatten_forward(self.value(*input)), Aux::None),
                Op::Sum { input } => (
                    Tensor::scalar(self.value(*input).data().iter().sum()),
                    Aux::None,
                ),
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let (v, a) = softmax_xent_forward(self.value(*logits), labels);
                    (v, a)
                }
            };
            self.nodes[i].value = Value::Owned(value);
            self.nodes[i].aux = aux;
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_done = false;
    }

    /// Valid cross-correlation, stride 1.
    /// input [N,C,H,W] * kernel [K,C,kh,kw] + bias [K] -> [N,K,H-kh+1,W-kw+1]
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        {
            let x = self.value(input);
            let k = self.value(kernel);
            let b = self.value(bias);
            let (xs, ks) = (x.shape(), k.shape());
            if xs.len() != 4 || ks.len() != 4 {
                return Err(Error::Contract(format!(
                    "conv2d wants 4-d input and kernel, got {xs:?} and {ks:?}"
                )));
            }
            if xs[1] != ks[1] {
                return Err(Error::Contract(format!(
                    "conv2d channel mismatch: input {xs:?} vs kernel {ks:?}"
                )));
            }
            if ks[2] > xs[2] || ks[3] > xs[3] {
                return Err(Error::Contract(format!(
                    "conv2d kernel {ks:?} larger than input {xs:?}"
                )));
            }
            if b.shape() != [ks[0]] {
                return Err(Error::Contract(format!(
                    "conv2d bias shape {:?} does not match {} output channels",
                    b.shape(),
                    ks[0]
                )));
            }
        }
        let (out, aux) = conv2d_forward(self.value(input), self.value(kernel), self.value(bias));
        Ok(self.push(Op::Conv2d { input, kernel, bias }, Value::Owned(out), aux))
    }

    /// 2x2 max pooling, stride 2. H and W must be even.
    pub fn maxpool2x2(&mut self, input: NodeId) -> Result<NodeId> {
        {
            let xs = self.value(input).shape();
            if xs.len() != 4 {
                return Err(Error::Contract(format!("maxpool2x2 wants 4-d input, got {xs:?}")));
            }
            if !xs[2].is_multiple_of(2) || !xs[3].is_multiple_of(2) {
                return Err(Error::Contract(format!(
                    "maxpool2x2 needs even H and W, got {xs:?}"
                )));
            }
        }
        let (out, aux) = maxpool_forward(self.value(input));
        Ok(self.push(Op::MaxPool2x2 { input }, Value::Owned(out), aux))
    }

    /// Affine map: input [N,D] * weight [D,M] + bias [M] -> [N,M]
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        {
            let xs = self.value(input).shape();
            let ws = self.value(weight).shape();
            let bs = self.value(bias).shape();
            if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
                return Err(Error::Contract(format!(
                    "dense shape mismatch: input {xs:?} vs weight {ws:?}"
                )));
            }
            if bs != [ws[1]] {
                return Err(Error::Contract(format!(
                    "dense bias shape {bs:?} does not match {} outputs",
                    ws[1]
                )));
            }
        }
        let out = dense_forward(self.value(input), self.value(weight), self.value(bias));
        Ok(self.push(Op::Dense { input, weight, bias }, Value::Owned(out), Aux::None))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = relu_forward(self.value(input));
        self.push(Op::Relu { input }, Value::Owned(out), Aux::None)
    }

    /// [N, ...] -> [N, prod(...)]
    pub fn flatten(&mut self, input: NodeId) -> NodeId {
        let out = flatten_forward(self.value(input));
        self.push(Op::Flatten { input }, Value::Owned(out), Aux::None)
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(input).data().iter().sum());
        self.push(Op::Sum { input }, Value::Owned(out), Aux::None)
    }

    /// Mean over the batch of -log softmax(logits)[label].
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[u8]) -> Result<NodeId> {
        {
            let ls = self.value(logits).shape();
            if ls.len() != 2 {
                return Err(Error::Contract(format!(
                    "softmax_cross_entropy wants 2-d logits, got {ls:?}"
                )));
            }
            if labels.len() != ls[0] {
                return Err(Error::Contract(format!(
                    "{} labels for batch of {}",
                    labels.len(),
                    ls[0]
                )));
            }
            let classes = ls[1];
            if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
                return Err(Error::Contract(format!(
                    "label {bad} out of range for {classes} classes"
                )));
            }
        }
        let (out, aux) = softmax_xent_forward(self.value(logits), labels);
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec() },
            Value::Owned(out),
            aux,
        ))
    }

    /// Populate gradients of `loss` w.r.t. every node. `loss` must be scalar.
    /// Running it again recomputes from scratch (accumulators are reset).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = self.grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Conv2d { input, kernel, bias } => {
                    let (input, kernel, bias) = (*input, *kernel, *bias);
                    let Aux::Conv { cols } = &self.nodes[i].aux else { unreachable!() };
                    let (dx, dk, db) = conv2d_backward(
                        self.nodes[input.0].value.tensor(),
                        self.nodes[kernel.0].value.tensor(),
                        cols,
                        &dy,
                    );
                    self.accumulate(input, dx);
                    self.accumulate(kernel, dk);
                    self.accumulate(bias, db);
                }
                Op::MaxPool2x2 { input } => {
                    let input = *input;
                    let Aux::Pool { argmax } = &self.nodes[i].aux else { unreachable!() };
                    let mut dx = Tensor::zeros(self.nodes[input.0].value.tensor().shape().to_vec());
                    for (o, &src) in argmax.iter().enumerate() {
                        dx.data_mut()[src] += dy.data()[o];
                    }
                    self.accumulate(input, dx);
                }
                Op::Dense { input, weight, bias } => {
                    let (input, weight, bias) = (*input, *weight, *bias);
                    let x = self.nodes[input.0].value.tensor();
                    let w = self.nodes[weight.0].value.tensor();
                    let (n, d) = (x.shape()[0], x.shape()[1]);
                    let m = w.shape()[1];
                    // dx = dy . w^T
                    let wt = transpose(w.data(), d, m);
                    let dx = Tensor::new(vec![n, d], gemm(dy.data(), &wt, n, m, d))?;
                    // dw = x^T . dy
                    let xt = transpose(x.data(), n, d);
                    let dw = Tensor::new(vec![d, m], gemm(&xt, dy.data(), d, n, m))?;
                    // db = column sums of dy
                    let mut db = Tensor::zeros(vec![m]);
                    for row in 0..n {
                        for col in 0..m {
                            db.data_mut()[col] += dy.data()[row * m + col];
                        }
                    }
                    self.accumulate(input, dx);
                    self.accumulate(weight, dw);
                    self.accumulate(bias, db);
                }
                Op::Relu { input } => {
                    let input = *input;
                    let x = self.nodes[input.0].value.tensor();
                    let mut dx = Tensor::zeros(x.shape().to_vec());
                    for (j, (&xv, &g)) in x.data().iter().zip(dy.data()).enumerate() {
                        if xv > 0.0 {
                            dx.data_mut()[j] = g;
                        }
                    }
                    self.accumulate(input, dx);
                }
                Op::Flatten { input } => {
                    let input = *input;
                    let shape = self.nodes[input.0].value.tensor().shape().to_vec();
                    let dx = Tensor::new(shape, dy.data().to_vec())?;
                    self.accumulate(input, dx);
                }
                Op::Sum { input } => {
                    let input = *input;
                    let shape = self.nodes[input.0].value.tensor().shape().to_vec();
                    let numel: usize = shape.iter().product();
                    let dx = Tensor::new(shape, vec![dy.data()[0]; numel])?;
                    self.accumulate(input, dx);
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let logits = *logits;
                    let Aux::Softmax { probs } = &self.nodes[i].aux else { unreachable!() };
                    let ls = self.nodes[logits.0].value.tensor().shape();
                    let (n, c) = (ls[0], ls[1]);
                    let scale = dy.data()[0] / n as f64;
                    let mut dl = Tensor::zeros(vec![n, c]);
                    for row in 0..n {
                        for col in 0..c {
                            let one_hot = if labels[row] as usize == col { 1.0 } else { 0.0 };
                            dl.data_mut()[row * c + col] =
                                (probs[row * c + col] - one_hot) * scale;
                        }
                    }
                    self.accumulate(logits, dl);
                }
            }
            // Leaves keep their gradient; interior nodes keep theirs too so
            // callers can inspect any node after backward.
            self.grads[i] = Some(dy);
        }
        self.backward_done = true;
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor) {
        match &mut self.grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}

// ---------------------------------------------------------------------------
// forward kernels

fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> (Tensor, Aux) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ko, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let patch = c * kh * kw;
    let field = oh * ow;

    // Per-image GEMM keeps the output rows small enough to stay in L1; a
    // batched [patch, N*field] matrix measured slower here.
    let mut out = Tensor::zeros(vec![n, ko, oh, ow]);
    let mut cols = vec![0.0; n * patch * field];
    for img in 0..n {
        let cols_img = &mut cols[img * patch * field..(img + 1) * patch * field];
        im2col_into(&x.data()[img * c * h * w..(img + 1) * c * h * w], c, h, w, kh, kw, cols_img);
        let out_img = &mut out.data_mut()[img * ko * field..(img + 1) * ko * field];
        gemm_acc(k.data(), cols_img, out_img, ko, patch, field);
        for ch in 0..ko {
            let bias = b.data()[ch];
            for v in &mut out_img[ch * field..(ch + 1) * field] {
                *v += bias;
            }
        }
    }
    (out, Aux::Conv { cols })
}

/// Fill `cols` with the [patch = C*kh*kw, field = OH*OW] column matrix of one
/// image.
fn im2col_into(x: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [f64]) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let field = oh * ow;
    let mut row = 0;
    for ch in 0..c {
        for dy in 0..kh {
            for dx in 0..kw {
                let dst = &mut cols[row * field..(row + 1) * field];
                for oy in 0..oh {
                    let src = &x[ch * h * w + (oy + dy) * w + dx..];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(&src[..ow]);
                }
                row += 1;
            }
        }
    }
}

fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    cols: &[f64],
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ko, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let patch = c * kh * kw;
    let field = oh * ow;

    let mut dx = Tensor::zeros(vec![n, c, h, w]);
    let mut dk = Tensor::zeros(vec![ko, c, kh, kw]);
    let mut db = Tensor::zeros(vec![ko]);
    let kt = transpose(k.data(), ko, patch);

    for img in 0..n {
        let dy_img = &dy.data()[img * ko * field..(img + 1) * ko * field];
        let cols_img = &cols[img * patch * field..(img + 1) * patch * field];
        // dk += dy_img [ko, field] . cols^T [field, patch]
        let cols_t = transpose(cols_img, patch, field);
        gemm_acc(dy_img, &cols_t, dk.data_mut(), ko, field, patch);
        // db += row sums
        for ch in 0..ko {
            db.data_mut()[ch] += dy_img[ch * field..(ch + 1) * field].iter().sum::<f64>();
        }
        // dcols = k^T [patch, ko] . dy_img [ko, field], scattered back
        let dcols = gemm(&kt, dy_img, patch, ko, field);
        col2im_acc(
            &dcols,
            c,
            h,
            w,
            kh,
            kw,
            &mut dx.data_mut()[img * c * h * w..(img + 1) * c * h * w],
        );
    }
    (dx, dk, db)
}

fn col2im_acc(cols: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, out: &mut [f64]) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let field = oh * ow;
    let mut row = 0;
    for ch in 0..c {
        for dy in 0..kh {
            for dx in 0..kw {
                let src = &cols[row * field..(row + 1) * field];
                for oy in 0..oh {
                    let dst = &mut out[ch * h * w + (oy + dy) * w + dx..];
                    for ox in 0..ow {
                        dst[ox] += src[oy * ow + ox];
                    }
                }
                row += 1;
            }
        }
    }
}

fn maxpool_forward(x: &Tensor) -> (Tensor, Aux) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let mut o = 0;
    for img in 0..n {
        for ch in 0..c {
            let plane = (img * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    // Strictly-greater comparison keeps the first index on ties.
                    let mut best_idx = plane + (2 * oy) * w + 2 * ox;
                    let mut best = x.data()[best_idx];
                    for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let idx = plane + (2 * oy + dy) * w + 2 * ox + dx;
                        let v = x.data()[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                    out.data_mut()[o] = best;
                    argmax[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    (out, Aux::Pool { argmax })
}

fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[1];
    let mut out = Tensor::zeros(vec![n, m]);
    for row in 0..n {
        out.data_mut()[row * m..(row + 1) * m].copy_from_slice(b.data());
    }
    gemm_acc(x.data(), w.data(), out.data_mut(), n, d, m);
    out
}

fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

fn flatten_forward(x: &Tensor) -> Tensor {
    let n = x.shape()[0];
    let rest: usize = x.shape()[1..].iter().product();
    Tensor::new(vec![n, rest], x.data().to_vec()).expect("flatten preserves element count")
}

fn softmax_xent_forward(logits: &Tensor, labels: &[u8]) -> (Tensor, Aux) {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let mut probs = vec![0.0; n * c];
    let mut total = 0.0;
    for row in 0..n {
        let l = &logits.data()[row * c..(row + 1) * c];
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in l.iter().enumerate() {
            let e = (v - max).exp();
            probs[row * c + j] = e;
            sum += e;
        }
        for p in &mut probs[row * c..(row + 1) * c] {
            *p /= sum;
        }
        // loss_row = log(sum exp(z)) - z[label], z = l - max
        total += sum.ln() - (l[labels[row] as usize] - max);
    }
    (Tensor::scalar(total / n as f64), Aux::Softmax { probs })
}
