//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every operator appends one
//! node whose inputs are earlier nodes, so insertion order is a topological
//! order and the backward sweep walks the tape once in reverse. A graph is
//! built per forward pass and consumed by [`Graph::backward`].

use super::{AutodiffError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Concat { parts: Vec<usize>, axis: usize },
    SliceCols { src: usize, start: usize },
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Sum(usize),
    L1 { pred: usize, target: usize, weights: Option<usize> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every trainable leaf of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a leaf created with `requires_grad`; `None` otherwise.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Moves the gradient of `var` into the grad slot of `tensor`.
    pub fn write_into(&mut self, var: Var, tensor: &mut Tensor) -> Result<(), AutodiffError> {
        let grad = self.take(var).ok_or(AutodiffError::MissingGrad { index: var.0 })?;
        tensor.set_grad(grad)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left: vec![left.0, left.1], right: vec![right.0, right.1] }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor as a leaf. Gradients are tracked when the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, tensor: &Tensor) -> Result<Var, AutodiffError> {
        let (rows, cols) = tensor.dims2().ok_or_else(|| AutodiffError::NotMatrix { shape: tensor.shape().to_vec() })?;
        Ok(self.push(rows, cols, tensor.data().to_vec(), Op::Leaf, tensor.requires_grad()))
    }

    /// Untracked constant leaf.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var, AutodiffError> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(AutodiffError::InvalidShape { shape: vec![rows, cols], len: data.len() });
        }
        Ok(self.push(rows, cols, data, Op::Leaf, false))
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn dims(&self, var: Var) -> (usize, usize) {
        let n = &self.nodes[var.0];
        (n.rows, n.cols)
    }

    pub fn to_tensor(&self, var: Var) -> Tensor {
        let n = &self.nodes[var.0];
        Tensor::from_parts(vec![n.rows, n.cols], n.value.clone())
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), AutodiffError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(shape_err(op, da, db));
        }
        Ok(da)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        let (r, c) = self.same_shape(name, a, b)?;
        let value = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(r, c, value, op, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(x);
        let value = self.nodes[x.0].value.iter().map(|&v| f(v)).collect();
        let rg = self.requires_grad(x);
        self.push(r, c, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Adds a `[1, n]` row to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(x);
        let db = self.dims(bias);
        if db != (1, c) {
            return Err(shape_err("add_bias", (r, c), db));
        }
        let b = &self.nodes[bias.0].value;
        let value = self.nodes[x.0].value.chunks_exact(c).flat_map(|row| row.iter().zip(b).map(|(v, w)| v + w)).collect();
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        Ok(self.push(r, c, value, Op::AddBias(x.0, bias.0), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut out, m, k, n);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(m, n, out, Op::MatMul(a.0, b.0), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = &self.nodes[x.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.requires_grad(x);
        self.push(c, r, out, Op::Transpose(x.0), rg)
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let (r0, c0) = self.dims(first);
        let (rows, cols, value) = match axis {
            0 => {
                let mut rows = 0;
                for &p in parts {
                    let d = self.dims(p);
                    if d.1 != c0 {
                        return Err(shape_err("concat", (r0, c0), d));
                    }
                    rows += d.0;
                }
                let value = parts.iter().flat_map(|p| self.nodes[p.0].value.iter().copied()).collect();
                (rows, c0, value)
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let d = self.dims(p);
                    if d.0 != r0 {
                        return Err(shape_err("concat", (r0, c0), d));
                    }
                    cols += d.1;
                }
                let mut value = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        let c = self.nodes[p.0].cols;
                        value.extend_from_slice(&self.nodes[p.0].value[i * c..(i + 1) * c]);
                    }
                }
                (r0, cols, value)
            }
            _ => return Err(AutodiffError::InvalidAxis { axis }),
        };
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(rows, cols, value, Op::Concat { parts: parts.iter().map(|p| p.0).collect(), axis }, rg))
    }

    /// Columns `start..start + len` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(AutodiffError::SliceOutOfBounds { start, len, cols: c });
        }
        let src = &self.nodes[x.0].value;
        let value = (0..r).flat_map(|i| src[i * c + start..i * c + start + len].iter().copied()).collect();
        let rg = self.requires_grad(x);
        Ok(self.push(r, len, value, Op::SliceCols { src: x.0, start }, rg))
    }

    /// Elementwise rectifier; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x.0))
    }

    /// Sum of all elements as a `[1, 1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        let rg = self.requires_grad(x);
        self.push(1, 1, vec![s], Op::Sum(x.0), rg)
    }

    /// `(1/N) Σ w_i |pred_i - target_i|`, weights defaulting to 1.
    pub fn l1_loss(&mut self, pred: Var, target: Var, weights: Option<Var>) -> Result<Var, AutodiffError> {
        let n = self.nodes[pred.0].value.len();
        let check = |g: &Self, other: Var| {
            if g.nodes[other.0].value.len() != n {
                Err(shape_err("l1_loss", g.dims(pred), g.dims(other)))
            } else {
                Ok(())
            }
        };
        check(self, target)?;
        if let Some(w) = weights {
            check(self, w)?;
        }
        let p = &self.nodes[pred.0].value;
        let t = &self.nodes[target.0].value;
        let total: f64 = match weights {
            Some(w) => {
                let w = &self.nodes[w.0].value;
                p.iter().zip(t).zip(w).map(|((a, b), w)| w * (a - b).abs()).sum()
            }
            None => p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum(),
        };
        let rg = self.requires_grad(pred) || self.requires_grad(target) || weights.is_some_and(|w| self.requires_grad(w));
        let op = Op::L1 { pred: pred.0, target: target.0, weights: weights.map(|w| w.0) };
        Ok(self.push(1, 1, vec![total / n as f64], op, rg))
    }

    /// Reverse sweep from a scalar. Consumes the graph: a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::GraphConsumed);
        }
        let out = &self.nodes[loss.0];
        if out.value.len() != 1 {
            return Err(AutodiffError::NotScalar { shape: vec![out.rows, out.cols] });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if out.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        let mut leaf_grads = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                leaf_grads[idx] = Some(grads[idx].take().unwrap_or_else(|| vec![0.0; node.value.len()]));
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        // Accumulate `f(i)` into the gradient buffer of input `target`.
        let mut acc = |target: usize, f: &dyn Fn(&mut [f64])| {
            if !nodes[target].requires_grad {
                return;
            }
            let buf = grads[target].get_or_insert_with(|| vec![0.0; nodes[target].value.len()]);
            f(buf);
        };
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(a, &|buf| buf.iter_mut().zip(g).for_each(|(o, gi)| *o += gi));
                acc(b, &|buf| buf.iter_mut().zip(g).for_each(|(o, gi)| *o += gi));
            }
            Op::Sub(a, b) => {
                acc(a, &|buf| buf.iter_mut().zip(g).for_each(|(o, gi)| *o += gi));
                acc(b, &|buf| buf.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a].value, &nodes[b].value);
                acc(a, &|buf| {
                    for ((o, gi), y) in buf.iter_mut().zip(g).zip(vb) {
                        *o += gi * y;
                    }
                });
                acc(b, &|buf| {
                    for ((o, gi), x) in buf.iter_mut().zip(g).zip(va) {
                        *o += gi * x;
                    }
                });
            }
            Op::AddBias(x, bias) => {
                let c = node.cols;
                acc(x, &|buf| buf.iter_mut().zip(g).for_each(|(o, gi)| *o += gi));
                acc(bias, &|buf| {
                    for row in g.chunks_exact(c) {
                        buf.iter_mut().zip(row).for_each(|(o, gi)| *o += gi);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a].rows, nodes[a].cols);
                let n = nodes[b].cols;
                let (va, vb) = (&nodes[a].value, &nodes[b].value);
                // dA = G · Bᵀ
                acc(a, &|buf| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &vb[p * n..(p + 1) * n];
                            buf[i * k + p] += gi.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                // dB = Aᵀ · G
                acc(b, &|buf| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = va[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            buf[p * n..(p + 1) * n].iter_mut().zip(gi).for_each(|(o, x)| *o += a_ip * x);
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (nodes[x].rows, nodes[x].cols);
                acc(x, &|buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Concat { ref parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = (nodes[p].rows, nodes[p].cols);
                    match axis {
                        0 => {
                            let len = pr * pc;
                            acc(p, &|buf| buf.iter_mut().zip(&g[offset..offset + len]).for_each(|(o, gi)| *o += gi));
                            offset += len;
                        }
                        _ => {
                            let total = node.cols;
                            acc(p, &|buf| {
                                for i in 0..pr {
                                    let src = &g[i * total + offset..i * total + offset + pc];
                                    buf[i * pc..(i + 1) * pc].iter_mut().zip(src).for_each(|(o, gi)| *o += gi);
                                }
                            });
                            offset += pc;
                        }
                    }
                }
            }
            Op::SliceCols { src, start } => {
                let c = nodes[src].cols;
                let len = node.cols;
                acc(src, &|buf| {
                    for (i, row) in g.chunks_exact(len).enumerate() {
                        buf[i * c + start..i * c + start + len].iter_mut().zip(row).for_each(|(o, gi)| *o += gi);
                    }
                });
            }
            Op::Relu(x) => {
                let vx = &nodes[x].value;
                acc(x, &|buf| {
                    for ((o, gi), v) in buf.iter_mut().zip(g).zip(vx) {
                        if *v > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(x, &|buf| {
                    for ((o, gi), t) in buf.iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - t * t);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(x, &|buf| {
                    for ((o, gi), s) in buf.iter_mut().zip(g).zip(y) {
                        *o += gi * s * (1.0 - s);
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                acc(x, &|buf| buf.iter_mut().for_each(|o| *o += g0));
            }
            Op::L1 { pred, target, weights } => {
                let n = nodes[pred].value.len() as f64;
                let g0 = g[0];
                let (vp, vt) = (&nodes[pred].value, &nodes[target].value);
                let w = |i: usize| weights.map_or(1.0, |w| nodes[w].value[i]);
                acc(pred, &|buf| {
                    for (i, o) in buf.iter_mut().enumerate() {
                        *o += g0 * w(i) * sign(vp[i] - vt[i]) / n;
                    }
                });
                acc(target, &|buf| {
                    for (i, o) in buf.iter_mut().enumerate() {
                        *o -= g0 * w(i) * sign(vp[i] - vt[i]) / n;
                    }
                });
                if let Some(wi) = weights {
                    acc(wi, &|buf| {
                        for (i, o) in buf.iter_mut().enumerate() {
                            *o += g0 * (vp[i] - vt[i]).abs() / n;
                        }
                    });
                }
            }
        }
    }
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`.
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            orow.iter_mut().zip(&b[p * n..(p + 1) * n]).for_each(|(o, x)| *o += a_ip * x);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// Subgradient of |x| at 0 is 0.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
