use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use super::{Activation, NdError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `Σ aᵢ·Wᵢ + bias + scalar`
    Linear {
        terms: Vec<(Var, Var)>,
        bias: Option<Var>,
        scalar: Option<Var>,
    },
    /// `a(m×n) + b(n)` broadcast over rows
    AddRow(Var, Var),
    /// `a + s` with `s` a one-element node
    AddScalar(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Act(Var, Activation),
    /// `g·a + (1−g)·b`
    Mix(Var, Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    /// Cross entropy over column blocks of width `classes`; stores softmax.
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        classes: usize,
        scale: f64,
        probs: Vec<f64>,
    },
    SquaredError {
        pred: Var,
        target: Vec<f64>,
        row_weights: Option<Vec<f64>>,
        scale: f64,
    },
    Sum(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Records primitive operations over [`Tensor`]s for one reverse pass.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and the reverse pass is a single sweep from the output backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NdError {
    NdError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A non-differentiable input (data, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k || ta.shape().len() > 2 || tb.shape().len() > 2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), rg))
    }

    /// Fused affine map `Σ aᵢ·Wᵢ + bias + scalar` recorded as one node.
    ///
    /// Every term must produce the same `m×n` shape; `bias` has length `n`
    /// and `scalar` is a one-element node broadcast everywhere.
    pub fn linear(
        &mut self,
        terms: &[(Var, Var)],
        bias: Option<Var>,
        scalar: Option<Var>,
    ) -> Result<Var, NdError> {
        let (first_a, first_w) = *terms.first().expect("linear needs at least one term");
        let m = self.value(first_a).rows();
        let n = self.value(first_w).cols();
        let mut out = vec![0.0; m * n];
        let mut rg = false;
        for &(a, w) in terms {
            let (ta, tw) = (self.value(a), self.value(w));
            if ta.rows() != m || tw.cols() != n || ta.cols() != tw.rows() {
                return Err(shape_err("linear", ta, tw));
            }
            gemm_nn(ta.data(), tw.data(), &mut out, m, ta.cols(), n);
            rg |= self.rg(a) || self.rg(w);
        }
        if let Some(b) = bias {
            let tb = self.value(b);
            if tb.len() != n {
                return Err(shape_err("linear bias", self.value(first_w), tb));
            }
            for row in out.chunks_mut(n) {
                for (x, &y) in row.iter_mut().zip(tb.data()) {
                    *x += y;
                }
            }
            rg |= self.rg(b);
        }
        if let Some(s) = scalar {
            let ts = self.value(s);
            if ts.len() != 1 {
                return Err(shape_err("linear scalar", self.value(first_w), ts));
            }
            let sv = ts.item();
            for x in out.iter_mut() {
                *x += sv;
            }
            rg |= self.rg(s);
        }
        Ok(self.push(
            Op::Linear {
                terms: terms.to_vec(),
                bias,
                scalar,
            },
            Tensor::from_parts(vec![m, n], out),
            rg,
        ))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() || ta.cols() != tb.cols() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = ta.with_shape_of(data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = ta.cols();
        if tb.len() != n {
            return Err(shape_err("add_row", ta, tb));
        }
        let b = tb.data();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        let value = ta.with_shape_of(data);
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Op::AddRow(a, bias), value, rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var, NdError> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.len() != 1 {
            return Err(shape_err("add_scalar", ta, ts));
        }
        let sv = ts.item();
        let value = ta.map(|x| x + sv);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(Op::AddScalar(a, s), value, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(Op::Scale(a, factor), value, rg)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 - x);
        let rg = self.rg(a);
        self.push(Op::OneMinus(a), value, rg)
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Var {
        let value = self.value(a).map(|x| kind.apply(x));
        let rg = self.rg(a);
        self.push(Op::Act(a, kind), value, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Relu)
    }

    /// Convex mix `g·a + (1−g)·b`, the coupled-gate update.
    pub fn mix(&mut self, g: Var, a: Var, b: Var) -> Result<Var, NdError> {
        let (tg, ta, tb) = (self.value(g), self.value(a), self.value(b));
        if tg.len() != ta.len() || ta.len() != tb.len() || tg.cols() != ta.cols() {
            return Err(shape_err("mix", tg, ta));
        }
        let data = tg
            .data()
            .iter()
            .zip(ta.data())
            .zip(tb.data())
            .map(|((&g, &a), &b)| g * a + (1.0 - g) * b)
            .collect();
        let value = tg.with_shape_of(data);
        let rg = self.rg(g) || self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mix(g, a, b), value, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NdError> {
        let first = self.value(parts[0]);
        let rows = first.rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", first, t));
            }
            total += t.cols();
        }
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + c].copy_from_slice(t.row(r));
            }
            offset += c;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let shape = if first.shape().len() == 1 && rows == 1 {
            vec![total]
        } else {
            vec![rows, total]
        };
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_parts(shape, data),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NdError> {
        let ta = self.value(a);
        let (rows, cols) = (ta.rows(), ta.cols());
        if start + len > cols {
            return Err(NdError::Slice {
                cols,
                start,
                len,
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let shape = if ta.shape().len() == 1 {
            vec![len]
        } else {
            vec![rows, len]
        };
        let rg = self.rg(a);
        Ok(self.push(Op::SliceCols(a, start), Tensor::from_parts(shape, data), rg))
    }

    /// `scale · Σ_rows Σ_heads −log softmax(block)[label]`.
    ///
    /// `logits` is `rows × (heads·classes)`; `labels` holds `rows·heads`
    /// class indices in row-major order.
    pub fn softmax_xent(
        &mut self,
        logits: Var,
        labels: &[usize],
        classes: usize,
        scale: f64,
    ) -> Result<Var, NdError> {
        let t = self.value(logits);
        if classes < 2 {
            return Err(NdError::TooFewClasses(classes));
        }
        if !t.cols().is_multiple_of(classes) || labels.len() * classes != t.len() {
            return Err(NdError::Labels {
                logits: t.shape().to_vec(),
                labels: labels.len(),
                classes,
            });
        }
        let mut probs = vec![0.0; t.len()];
        let mut total = 0.0;
        for (block, (&label, p)) in t
            .data()
            .chunks(classes)
            .zip(labels.iter().zip(probs.chunks_mut(classes)))
        {
            if label >= classes {
                return Err(NdError::LabelOutOfRange { label, classes });
            }
            total += xent_block(block, label, p);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                classes,
                scale,
                probs,
            },
            Tensor::scalar(scale * total),
            rg,
        ))
    }

    /// `scale · Σ_r w_r Σ_c (pred − target)²`.
    pub fn squared_error(
        &mut self,
        pred: Var,
        target: &Tensor,
        row_weights: Option<&[f64]>,
        scale: f64,
    ) -> Result<Var, NdError> {
        let tp = self.value(pred);
        if tp.len() != target.len() || tp.cols() != target.cols() {
            return Err(shape_err("squared_error", tp, target));
        }
        if let Some(w) = row_weights {
            if w.len() != tp.rows() {
                return Err(NdError::Weights {
                    rows: tp.rows(),
                    weights: w.len(),
                });
            }
        }
        let cols = tp.cols();
        let mut total = 0.0;
        for (r, (pr, tr)) in tp.data().chunks(cols).zip(target.data().chunks(cols)).enumerate() {
            let se: f64 = pr.iter().zip(tr).map(|(a, b)| (a - b) * (a - b)).sum();
            total += row_weights.map_or(1.0, |w| w[r]) * se;
        }
        let rg = self.rg(pred);
        Ok(self.push(
            Op::SquaredError {
                pred,
                target: target.data().to_vec(),
                row_weights: row_weights.map(<[f64]>::to_vec),
                scale,
            },
            Tensor::scalar(scale * total),
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    /// Smallest `|x|` over every relu input recorded so far.
    pub fn min_relu_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for node in &self.nodes {
            if let Op::Act(a, Activation::Relu) = node.op {
                for &x in self.nodes[a.0].value.data() {
                    m = m.min(x.abs());
                }
            }
        }
        m
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients, NdError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(NdError::NonScalar(out.shape().to_vec()));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(out.shape(), 1.0));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                self.accumulate(grads, *a, |ga| gemm_nt(gd, tb.data(), ga, m, k, n));
                self.accumulate(grads, *b, |gb| gemm_tn(ta.data(), gd, gb, m, k, n));
            }
            Op::Linear {
                terms,
                bias,
                scalar,
            } => {
                let (m, n) = (g.rows(), g.cols());
                for &(a, w) in terms {
                    let (ta, tw) = (self.value(a), self.value(w));
                    let k = ta.cols();
                    self.accumulate(grads, a, |ga| gemm_nt(gd, tw.data(), ga, m, k, n));
                    self.accumulate(grads, w, |gw| gemm_tn(ta.data(), gd, gw, m, k, n));
                }
                if let Some(b) = bias {
                    self.accumulate(grads, *b, |gb| {
                        for row in gd.chunks(n) {
                            axpy(gb, row, 1.0);
                        }
                    });
                }
                if let Some(s) = scalar {
                    let total: f64 = gd.iter().sum();
                    self.accumulate(grads, *s, |gs| gs[0] += total);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| axpy(ga, gd, 1.0));
                self.accumulate(grads, *b, |gb| axpy(gb, gd, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| axpy(ga, gd, 1.0));
                self.accumulate(grads, *b, |gb| axpy(gb, gd, -1.0));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((x, &d), &y) in ga.iter_mut().zip(gd).zip(tb) {
                        *x += d * y;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((x, &d), &y) in gb.iter_mut().zip(gd).zip(ta) {
                        *x += d * y;
                    }
                });
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, |ga| axpy(ga, gd, 1.0));
                let n = g.cols();
                self.accumulate(grads, *bias, |gb| {
                    for row in gd.chunks(n) {
                        axpy(gb, row, 1.0);
                    }
                });
            }
            Op::AddScalar(a, s) => {
                self.accumulate(grads, *a, |ga| axpy(ga, gd, 1.0));
                let total: f64 = gd.iter().sum();
                self.accumulate(grads, *s, |gs| gs[0] += total);
            }
            Op::Scale(a, f) => {
                self.accumulate(grads, *a, |ga| axpy(ga, gd, *f));
            }
            Op::OneMinus(a) => {
                self.accumulate(grads, *a, |ga| axpy(ga, gd, -1.0));
            }
            Op::Act(a, kind) => {
                let y = node.value.data();
                let kind = *kind;
                self.accumulate(grads, *a, |ga| {
                    for ((x, &d), &yv) in ga.iter_mut().zip(gd).zip(y) {
                        *x += d * kind.derivative_from_output(yv);
                    }
                });
            }
            Op::Mix(gate, a, b) => {
                let (tg, ta, tb) = (
                    self.value(*gate).data(),
                    self.value(*a).data(),
                    self.value(*b).data(),
                );
                self.accumulate(grads, *gate, |gg| {
                    for i in 0..gg.len() {
                        gg[i] += gd[i] * (ta[i] - tb[i]);
                    }
                });
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * tg[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += gd[i] * (1.0 - tg[i]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.accumulate(grads, p, |gp| {
                        for r in 0..rows {
                            let src = &gd[r * total + offset..r * total + offset + c];
                            axpy(&mut gp[r * c..(r + 1) * c], src, 1.0);
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let cols = self.value(*a).cols();
                let len = g.cols();
                let start = *start;
                self.accumulate(grads, *a, |ga| {
                    for (r, src) in gd.chunks(len).enumerate() {
                        axpy(&mut ga[r * cols + start..r * cols + start + len], src, 1.0);
                    }
                });
            }
            Op::SoftmaxXent {
                logits,
                labels,
                classes,
                scale,
                probs,
            } => {
                let d = gd[0] * scale;
                let classes = *classes;
                self.accumulate(grads, *logits, |gl| {
                    for (blk, (&label, p)) in gl
                        .chunks_mut(classes)
                        .zip(labels.iter().zip(probs.chunks(classes)))
                    {
                        for (j, (x, &pj)) in blk.iter_mut().zip(p).enumerate() {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            *x += d * (pj - onehot);
                        }
                    }
                });
            }
            Op::SquaredError {
                pred,
                target,
                row_weights,
                scale,
            } => {
                let d = gd[0] * scale;
                let tp = self.value(*pred);
                let cols = tp.cols();
                let pv = tp.data();
                self.accumulate(grads, *pred, |gp| {
                    for i in 0..gp.len() {
                        let w = row_weights.as_ref().map_or(1.0, |w| w[i / cols]);
                        gp[i] += d * w * 2.0 * (pv[i] - target[i]);
                    }
                });
            }
            Op::Sum(a) => {
                let d = gd[0];
                self.accumulate(grads, *a, |ga| {
                    for x in ga.iter_mut() {
                        *x += d;
                    }
                });
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// `−log softmax(block)[label]`, writing the softmax into `probs`.
fn xent_block(block: &[f64], label: usize, probs: &mut [f64]) -> f64 {
    let (arg, m) = block
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(ai, am), (i, v)| {
            if v > am {
                (i, v)
            } else {
                (ai, am)
            }
        });
    let mut rest = 0.0;
    for (i, (&z, p)) in block.iter().zip(probs.iter_mut()).enumerate() {
        let e = (z - m).exp();
        *p = e;
        if i != arg {
            rest += e;
        }
    }
    let denom = 1.0 + rest;
    for p in probs.iter_mut() {
        *p /= denom;
    }
    // ln_1p keeps tiny losses accurate when the label is the argmax
    rest.ln_1p() + (m - block[label])
}

/// `−log softmax(logits)[label]` in nats.
pub fn softmax_xent(logits: &Tensor, label: usize) -> Result<f64, NdError> {
    let k = logits.len();
    if k < 2 {
        return Err(NdError::TooFewClasses(k));
    }
    if label >= k {
        return Err(NdError::LabelOutOfRange { label, classes: k });
    }
    let mut probs = vec![0.0; k];
    Ok(xent_block(logits.data(), label, &mut probs))
}
