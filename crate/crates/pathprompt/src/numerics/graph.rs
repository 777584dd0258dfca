//! Reverse-mode automatic differentiation on a single-use tape.
//!
//! A [`Graph`] records every primitive as it runs. Node ids grow
//! monotonically and an operation's inputs always precede it, so the reverse
//! pass is a single walk from the loss node back to node 0, accumulating
//! adjoints additively. A graph and its tensors belong to one thread;
//! independent graphs may run concurrently.

use super::tensor::Tensor;
use super::NumericsError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// How `cross_entropy_logits` reduces per-row losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Concat { axis: usize, parts: Vec<Var> },
    MeanRows(Var),
    Tanh(Var),
    Relu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    CausalSoftmax(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, reduction: Reduction },
    GatherRows { table: Var, ids: Vec<usize> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    SumAll(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Concat { .. } => "concat",
            Op::MeanRows(..) => "mean_rows",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(..) => "softmax",
            Op::CausalSoftmax(..) => "causal_softmax",
            Op::CrossEntropy { .. } => "cross_entropy_logits",
            Op::GatherRows { .. } => "gather_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::SumAll(..) => "sum_all",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) | Op::MulRow(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::MeanRows(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::LayerNorm { x: a, .. }
            | Op::Softmax(a)
            | Op::CausalSoftmax(a)
            | Op::CrossEntropy { logits: a, .. }
            | Op::GatherRows { table: a, .. }
            | Op::SliceRows { x: a, .. }
            | Op::SliceCols { x: a, .. }
            | Op::Reshape(a)
            | Op::SumAll(a) => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// The tape. Every arithmetic method appends a node and returns its [`Var`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

const LN_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf that will receive a gradient on `backward`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_unchecked(value, Op::Leaf, requires_grad)
    }

    /// Insert a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if `v` carries one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, NumericsError> {
        value.check_finite(op.name())?;
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn mismatch(&self, op: &str, vars: &[Var]) -> NumericsError {
        let shapes: Vec<String> = vars.iter().map(|v| format!("{:?}", self.value(*v).shape())).collect();
        NumericsError::ShapeMismatch { op: op.into(), detail: shapes.join(" vs ") }
    }

    // ── elementwise ──────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("add", &[a, b]));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(t, Op::Add(a, b))
    }

    /// Broadcast-add a length-`d` vector to every row of an `(n, d)` matrix.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var, NumericsError> {
        let (rows, cols) = (self.value(m).rows(), self.value(m).cols());
        if !self.value(v).is_vector() || self.value(v).numel() != cols {
            return Err(self.mismatch("add_row", &[m, v]));
        }
        let mut data = self.value(m).data().to_vec();
        let vd = self.value(v).data();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += vd[c];
            }
        }
        let t = Tensor::new(self.value(m).shape().to_vec(), data)?;
        self.push(t, Op::AddRow(m, v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("mul", &[a, b]));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(t, Op::Mul(a, b))
    }

    /// Broadcast-multiply every row of an `(n, d)` matrix by a length-`d` vector.
    pub fn mul_row(&mut self, m: Var, v: Var) -> Result<Var, NumericsError> {
        let (rows, cols) = (self.value(m).rows(), self.value(m).cols());
        if !self.value(v).is_vector() || self.value(v).numel() != cols {
            return Err(self.mismatch("mul_row", &[m, v]));
        }
        let mut data = self.value(m).data().to_vec();
        let vd = self.value(v).data();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] *= vd[c];
            }
        }
        let t = Tensor::new(self.value(m).shape().to_vec(), data)?;
        self.push(t, Op::MulRow(m, v))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericsError> {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(t, Op::Scale(a, factor))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let neg = self.scale(b, -1.0)?;
        self.add(a, neg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let data = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(t, Op::Relu(a))
    }

    // ── linear algebra ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() && !ta.is_vector() {
            return Err(self.mismatch("matmul", &[a, b]));
        }
        let (n, k) = (ta.rows(), ta.cols());
        if !tb.is_matrix() || tb.rows() != k {
            return Err(self.mismatch("matmul", &[a, b]));
        }
        let m = tb.cols();
        let out = matmul_raw(ta.data(), tb.data(), n, k, m);
        let shape = if ta.is_vector() { vec![n, m] } else { vec![n, m] };
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(self.mismatch("transpose", &[a]));
        }
        let (n, m) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                data[c * n + r] = ta.at(r, c);
            }
        }
        let t = Tensor::matrix(m, n, data)?;
        self.push(t, Op::Transpose(a))
    }

    /// Concatenate tensors.
    ///
    /// * rank-1 parts with `axis == 0`: one long vector;
    /// * rank-2 parts with `axis == 0`: stack rows (equal widths);
    /// * rank-2 parts with `axis == 1`: widen rows (equal heights).
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch {
                op: "concat".into(),
                detail: "no parts".into(),
            });
        }
        let all_vec = parts.iter().all(|p| self.value(*p).is_vector());
        let all_mat = parts.iter().all(|p| self.value(*p).is_matrix());
        let t = if all_vec && axis == 0 {
            let mut data = Vec::new();
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
            Tensor::new(vec![data.len()], data)?
        } else if all_mat && axis == 0 {
            let cols = self.value(parts[0]).cols();
            if parts.iter().any(|p| self.value(*p).cols() != cols) {
                return Err(self.mismatch("concat", parts));
            }
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                rows += self.value(*p).rows();
                data.extend_from_slice(self.value(*p).data());
            }
            Tensor::matrix(rows, cols, data)?
        } else if all_mat && axis == 1 {
            let rows = self.value(parts[0]).rows();
            if parts.iter().any(|p| self.value(*p).rows() != rows) {
                return Err(self.mismatch("concat", parts));
            }
            let total_cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
            let mut data = vec![0.0; rows * total_cols];
            let mut offset = 0;
            for p in parts {
                let tp = self.value(*p);
                let w = tp.cols();
                for r in 0..rows {
                    data[r * total_cols + offset..r * total_cols + offset + w]
                        .copy_from_slice(&tp.data()[r * w..(r + 1) * w]);
                }
                offset += w;
            }
            Tensor::matrix(rows, total_cols, data)?
        } else {
            return Err(self.mismatch("concat", parts));
        };
        self.push(t, Op::Concat { axis, parts: parts.to_vec() })
    }

    /// Mean over axis 0: `(n, d)` → `(d,)`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(self.mismatch("mean_rows", &[a]));
        }
        let (n, d) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                out[c] += ta.at(r, c);
            }
        }
        for v in out.iter_mut() {
            *v /= n as f64;
        }
        let t = Tensor::vector(&out)?;
        self.push(t, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NumericsError> {
        let total: f64 = self.value(a).data().iter().sum();
        let t = Tensor::scalar(total)?;
        self.push(t, Op::SumAll(a))
    }

    // ── normalization and probabilities ──────────────────────────────────

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let (n, d) = (ta.rows(), ta.cols());
        if d == 0 {
            return Err(self.mismatch("layer_norm", &[a]));
        }
        let mut data = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &ta.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                data[r * d + c] = (row[c] - mean) * is;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(t, Op::LayerNorm { x: a, inv_std })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let (n, d) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            let row = &ta.data()[r * d..(r + 1) * d];
            softmax_row(row, &mut data[r * d..(r + 1) * d]);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(t, Op::Softmax(a))
    }

    /// Row-wise softmax over the causal prefix of a square score matrix:
    /// row `i` normalizes over columns `0..=i` and is exactly zero beyond.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if !ta.is_matrix() || ta.rows() != ta.cols() {
            return Err(self.mismatch("causal_softmax", &[a]));
        }
        let n = ta.rows();
        let mut data = vec![0.0; n * n];
        for r in 0..n {
            let row = &ta.data()[r * n..r * n + r + 1];
            softmax_row(row, &mut data[r * n..r * n + r + 1]);
        }
        let t = Tensor::matrix(n, n, data)?;
        self.push(t, Op::CausalSoftmax(a))
    }

    /// Cross-entropy from raw logits against integer class targets.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: &[usize],
        reduction: Reduction,
    ) -> Result<Var, NumericsError> {
        let tl = self.value(logits);
        let (n, v) = (tl.rows(), tl.cols());
        if targets.len() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy_logits".into(),
                detail: format!("{} logit rows vs {} targets", n, targets.len()),
            });
        }
        if let Some(bad) = targets.iter().find(|t| **t >= v) {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy_logits".into(),
                detail: format!("target {} out of range for {} classes", bad, v),
            });
        }
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            let row = &tl.data()[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[target];
        }
        if matches!(reduction, Reduction::Mean) {
            total /= n as f64;
        }
        let t = Tensor::scalar(total)?;
        self.push(t, Op::CrossEntropy { logits, targets: targets.to_vec(), reduction })
    }

    // ── structural ops ───────────────────────────────────────────────────

    /// Select rows of a table by index (embedding lookup). Duplicate ids are
    /// allowed; their adjoints accumulate.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let tt = self.value(table);
        if !tt.is_matrix() {
            return Err(self.mismatch("gather_rows", &[table]));
        }
        let (v, d) = (tt.rows(), tt.cols());
        if let Some(bad) = ids.iter().find(|i| **i >= v) {
            return Err(NumericsError::ShapeMismatch {
                op: "gather_rows".into(),
                detail: format!("row {} out of range for table with {} rows", bad, v),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        let t = Tensor::matrix(ids.len(), d, data)?;
        self.push(t, Op::GatherRows { table, ids: ids.to_vec() })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if !ta.is_matrix() || start >= end || end > ta.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "slice_rows".into(),
                detail: format!("rows {}..{} of shape {:?}", start, end, ta.shape()),
            });
        }
        let d = ta.cols();
        let data = ta.data()[start * d..end * d].to_vec();
        let t = Tensor::matrix(end - start, d, data)?;
        self.push(t, Op::SliceRows { x: a, start })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if !ta.is_matrix() || start >= end || end > ta.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "slice_cols".into(),
                detail: format!("cols {}..{} of shape {:?}", start, end, ta.shape()),
            });
        }
        let (n, d) = (ta.rows(), ta.cols());
        let w = end - start;
        let mut data = Vec::with_capacity(n * w);
        for r in 0..n {
            data.extend_from_slice(&ta.data()[r * d + start..r * d + end]);
        }
        let t = Tensor::matrix(n, w, data)?;
        self.push(t, Op::SliceCols { x: a, start })
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape".into(),
                detail: format!("{:?} -> {:?}", ta.shape(), shape),
            });
        }
        let t = Tensor::new(shape, ta.data().to_vec())?;
        self.push(t, Op::Reshape(a))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Populate gradients of `loss` w.r.t. every grad-requiring node.
    ///
    /// Leaves created with `requires_grad` that the loss does not reach end
    /// up with zero gradients rather than none.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::NonScalarLoss { shape: self.value(loss).shape().to_vec() });
        }
        self.grads = self.nodes.iter().map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![1.0; self.value(loss).numel()],
        )?);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(out_grad) = self.grads[id].take() else { continue };
            let op = self.nodes[id].op.clone();
            self.propagate(id, &op, &out_grad)?;
            self.grads[id] = Some(out_grad);
        }

        // Reachability gaps on grad-requiring leaves read as zero.
        for id in 0..self.nodes.len() {
            if self.nodes[id].needs_grad && matches!(self.nodes[id].op, Op::Leaf) && self.grads[id].is_none() {
                self.grads[id] = Some(Tensor::zeros(self.nodes[id].value.shape().to_vec()));
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = &mut self.grads[v.0];
        match slot {
            Some(g) => {
                for (gi, di) in g.data_mut().iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => {
                let mut g = Tensor::zeros(self.nodes[v.0].value.shape().to_vec());
                g.data_mut().copy_from_slice(delta);
                *slot = Some(g);
            }
        }
    }

    fn propagate(&mut self, id: usize, op: &Op, out_grad: &Tensor) -> Result<(), NumericsError> {
        let g = out_grad.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::AddRow(m, v) => {
                self.accumulate(*m, g);
                let cols = self.nodes[v.0].value.numel();
                let mut dv = vec![0.0; cols];
                for (i, gi) in g.iter().enumerate() {
                    dv[i % cols] += gi;
                }
                self.accumulate(*v, &dv);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> =
                    g.iter().zip(self.nodes[b.0].value.data()).map(|(gi, bi)| gi * bi).collect();
                let db: Vec<f64> =
                    g.iter().zip(self.nodes[a.0].value.data()).map(|(gi, ai)| gi * ai).collect();
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::MulRow(m, v) => {
                let cols = self.nodes[v.0].value.numel();
                let vd = self.nodes[v.0].value.data().to_vec();
                let md = self.nodes[m.0].value.data().to_vec();
                let dm: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * vd[i % cols]).collect();
                let mut dv = vec![0.0; cols];
                for (i, gi) in g.iter().enumerate() {
                    dv[i % cols] += gi * md[i];
                }
                self.accumulate(*m, &dm);
                self.accumulate(*v, &dv);
            }
            Op::Scale(a, factor) => {
                let da: Vec<f64> = g.iter().map(|gi| gi * factor).collect();
                self.accumulate(*a, &da);
            }
            Op::MatMul(a, b) => {
                let (n, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let m = self.nodes[b.0].value.cols();
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                let bt = transpose_raw(self.nodes[b.0].value.data(), k, m);
                let da = matmul_raw(g, &bt, n, m, k);
                let at = transpose_raw(self.nodes[a.0].value.data(), n, k);
                let db = matmul_raw(&at, g, k, n, m);
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Transpose(a) => {
                let (m, n) = (out_grad.rows(), out_grad.cols());
                let da = transpose_raw(g, m, n);
                self.accumulate(*a, &da);
            }
            Op::Concat { axis, parts } => {
                let all_vec = parts.iter().all(|p| self.nodes[p.0].value.is_vector());
                if all_vec && *axis == 0 {
                    let mut offset = 0;
                    for p in parts.clone() {
                        let len = self.nodes[p.0].value.numel();
                        let slice = g[offset..offset + len].to_vec();
                        self.accumulate(p, &slice);
                        offset += len;
                    }
                } else if *axis == 0 {
                    let mut offset = 0;
                    for p in parts.clone() {
                        let len = self.nodes[p.0].value.numel();
                        let slice = g[offset..offset + len].to_vec();
                        self.accumulate(p, &slice);
                        offset += len;
                    }
                } else {
                    let rows = out_grad.rows();
                    let total_cols = out_grad.cols();
                    let mut offset = 0;
                    for p in parts.clone() {
                        let w = self.nodes[p.0].value.cols();
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w].copy_from_slice(
                                &g[r * total_cols + offset..r * total_cols + offset + w],
                            );
                        }
                        self.accumulate(p, &dp);
                        offset += w;
                    }
                }
            }
            Op::MeanRows(a) => {
                let (n, d) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let mut da = vec![0.0; n * d];
                for r in 0..n {
                    for c in 0..d {
                        da[r * d + c] = g[c] / n as f64;
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::Tanh(a) => {
                let y = self.nodes[id].value.data().to_vec();
                let da: Vec<f64> = g.iter().zip(&y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                self.accumulate(*a, &da);
            }
            Op::Relu(a) => {
                let x = self.nodes[a.0].value.data().to_vec();
                let da: Vec<f64> =
                    g.iter().zip(&x).map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 }).collect();
                self.accumulate(*a, &da);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = self.nodes[id].value.data().to_vec();
                let (n, d) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                let mut da = vec![0.0; n * d];
                for r in 0..n {
                    let gr = &g[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let mean_g = gr.iter().sum::<f64>() / d as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        da[r * d + c] = inv_std[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
                self.accumulate(*x, &da);
            }
            Op::Softmax(a) => {
                let y = self.nodes[id].value.data().to_vec();
                let (n, d) = (out_grad.rows(), out_grad.cols());
                let mut da = vec![0.0; n * d];
                for r in 0..n {
                    let gr = &g[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for c in 0..d {
                        da[r * d + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::CausalSoftmax(a) => {
                // y is zero beyond each row's prefix, which zeroes those
                // terms in the standard softmax adjoint.
                let y = self.nodes[id].value.data().to_vec();
                let n = out_grad.rows();
                let mut da = vec![0.0; n * n];
                for r in 0..n {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &y[r * n..(r + 1) * n];
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for c in 0..=r {
                        da[r * n + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::CrossEntropy { logits, targets, reduction } => {
                let tl = &self.nodes[logits.0].value;
                let (n, v) = (tl.rows(), tl.cols());
                let w = g[0] * if matches!(reduction, Reduction::Mean) { 1.0 / n as f64 } else { 1.0 };
                let mut da = vec![0.0; n * v];
                for (r, &target) in targets.iter().enumerate() {
                    let row = &tl.data()[r * v..(r + 1) * v];
                    softmax_row(row, &mut da[r * v..(r + 1) * v]);
                    for c in 0..v {
                        da[r * v + c] *= w;
                    }
                    da[r * v + target] -= w;
                }
                self.accumulate(*logits, &da);
            }
            Op::GatherRows { table, ids } => {
                let d = self.nodes[table.0].value.cols();
                let rows = self.nodes[table.0].value.rows();
                let mut dt = vec![0.0; rows * d];
                for (i, &row) in ids.iter().enumerate() {
                    for c in 0..d {
                        dt[row * d + c] += g[i * d + c];
                    }
                }
                self.accumulate(*table, &dt);
            }
            Op::SliceRows { x, start } => {
                let (n, d) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                let mut dx = vec![0.0; n * d];
                dx[start * d..start * d + g.len()].copy_from_slice(g);
                self.accumulate(*x, &dx);
            }
            Op::SliceCols { x, start } => {
                let (n, d) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                let w = out_grad.cols();
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    dx[r * d + start..r * d + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(*x, &dx);
            }
            Op::Reshape(a) => {
                self.accumulate(*a, g);
            }
            Op::SumAll(a) => {
                let da = vec![g[0]; self.nodes[a.0].value.numel()];
                self.accumulate(*a, &da);
            }
        }
        Ok(())
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * m..(l + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            out[c * n + r] = a[r * m + c];
        }
    }
    out
}
