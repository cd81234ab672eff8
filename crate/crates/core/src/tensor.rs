//! Dense `f64` tensors and a define-by-run reverse-mode autodiff graph.
//!
//! A [`Graph`] is built fresh for every forward computation. Nodes are
//! appended in evaluation order, so the node index is already a valid
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! Row-wise operations (softmax, log-softmax, gather) treat a rank-1 tensor
//! of length `k` as a single `1 x k` row.

use crate::error::{MisdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(MisdError::Dimension(format!(
                "shape extents must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(MisdError::Dimension(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(rows, cols)` view; rank-1 tensors are one row.
    pub fn rows_cols(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            other => Err(MisdError::Dimension(format!(
                "expected rank 1 or 2, got shape {other:?}"
            ))),
        }
    }
}

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// Adds a length-`cols` row vector to every row.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    Softmax(NodeId, f64),
    LogSoftmax(NodeId, f64),
    Gather(NodeId, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddRow(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::Softmax(a, _)
            | Op::LogSoftmax(a, _)
            | Op::Gather(a, _) => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Define-by-run computation graph.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Registers a leaf. Its gradient is kept after `backward` when the
    /// tensor was created with [`Tensor::with_grad`].
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    /// Input node ids of `id`, all strictly smaller than `id`.
    pub fn inputs_of(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    fn push(&mut self, op: Op, mut value: Tensor) -> NodeId {
        let inputs = op.inputs();
        if !inputs.is_empty() {
            value.requires_grad = inputs.iter().any(|i| self.nodes[i.0].value.requires_grad);
        }
        value.grad = None;
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or_else(|| MisdError::Usage(format!("node {} is not in this graph", id.0)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.check(a)?.rows_cols()?;
        let (k2, n) = self.check(b)?.rows_cols()?;
        if k != k2 {
            return Err(MisdError::Dimension(format!(
                "matmul inner dimensions differ: {m}x{k} times {k2}x{n}"
            )));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.check(a)?.rows_cols()?;
        let rv = self.check(row)?;
        if rv.len() != n {
            return Err(MisdError::Dimension(format!(
                "row vector of length {} cannot broadcast over {m}x{n}",
                rv.len()
            )));
        }
        let bias = rv.data();
        let mut out = self.value(a).data().to_vec();
        for r in 0..m {
            for (o, b) in out[r * n..(r + 1) * n].iter_mut().zip(bias) {
                *o += b;
            }
        }
        let value = Tensor::new(self.value(a).shape().to_vec(), out)?;
        Ok(self.push(Op::AddRow(a, row), value))
    }

    fn zip_same(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let ta = self.check(a)?;
        let tb = self.check(b)?;
        if ta.shape() != tb.shape() {
            return Err(MisdError::Dimension(format!(
                "elementwise op on shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same(a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same(a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same(a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let t = self.check(a)?;
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.map(a, |x| x * factor)?;
        Ok(self.push(Op::Scale(a, factor), v))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.map(a, |x| if x > 0.0 { x } else { 0.0 })?;
        Ok(self.push(Op::Relu(a), v))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.map(a, f64::exp)?;
        Ok(self.push(Op::Exp(a), v))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if self.check(a)?.data().iter().any(|&x| x <= 0.0) {
            return Err(MisdError::Numeric("log of a non-positive value".into()));
        }
        let v = self.map(a, f64::ln)?;
        Ok(self.push(Op::Log(a), v))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?.data().iter().sum();
        Ok(self.push(Op::Sum(a), Tensor::scalar(s)))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.check(a)?;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Op::Mean(a), Tensor::scalar(s)))
    }

    /// Row sums, shape `[rows]`.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.check(a)?;
        let (m, n) = t.rows_cols()?;
        let out = (0..m).map(|r| t.data()[r * n..(r + 1) * n].iter().sum()).collect();
        Ok(self.push(Op::SumRows(a), Tensor::vector(out)?))
    }

    /// Row-wise `softmax(z / temperature)`.
    pub fn softmax(&mut self, a: NodeId, temperature: f64) -> Result<NodeId> {
        check_temperature(temperature)?;
        let t = self.check(a)?;
        let (m, n) = t.rows_cols()?;
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            out.extend(softmax_row(&t.data()[r * n..(r + 1) * n], temperature));
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax(a, temperature), v))
    }

    /// Row-wise `log_softmax(z / temperature)`.
    pub fn log_softmax(&mut self, a: NodeId, temperature: f64) -> Result<NodeId> {
        check_temperature(temperature)?;
        let t = self.check(a)?;
        let (m, n) = t.rows_cols()?;
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            out.extend(log_softmax_row(&t.data()[r * n..(r + 1) * n], temperature));
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::LogSoftmax(a, temperature), v))
    }

    /// Picks `a[r, indices[r]]` for every row; shape `[rows]`.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.check(a)?;
        let (m, n) = t.rows_cols()?;
        if indices.len() != m {
            return Err(MisdError::Dimension(format!(
                "gather needs {m} indices, got {}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(MisdError::Parameter(format!(
                "class index {bad} out of range for {n} classes"
            )));
        }
        let out = indices.iter().enumerate().map(|(r, &i)| t.data()[r * n + i]).collect();
        let v = Tensor::vector(out)?;
        Ok(self.push(Op::Gather(a, indices.to_vec()), v))
    }

    /// Mean cross-entropy `-log softmax(z / T)[y]` over the rows of `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize], temperature: f64) -> Result<NodeId> {
        let ls = self.log_softmax(logits, temperature)?;
        let picked = self.gather(ls, labels)?;
        let m = self.mean(picked)?;
        self.scale(m, -1.0)
    }

    /// Per-row cross-entropy, shape `[rows]`.
    pub fn cross_entropy_rows(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        temperature: f64,
    ) -> Result<NodeId> {
        let ls = self.log_softmax(logits, temperature)?;
        let picked = self.gather(ls, labels)?;
        self.scale(picked, -1.0)
    }

    /// Reverse sweep from a scalar root. Gradients of every leaf created with
    /// `requires_grad` are stored on the leaf and readable through [`Graph::grad`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_len = self.check(root)?.len();
        if root_len != 1 {
            return Err(MisdError::Usage(format!(
                "backward root must be scalar, got {root_len} elements"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.value.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (idx, g) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[idx];
            if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                let len = node.value.len();
                node.value.grad = Some(g.unwrap_or_else(|| vec![0.0; len]));
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = ta.rows_cols()?;
                let (_, n) = tb.rows_cols()?;
                if ta.requires_grad {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &tb.data[p * n..(p + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            da[i * k + p] = dot(grow, brow);
                        }
                    }
                    accumulate(grads, *a, &da);
                }
                if tb.requires_grad {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ta.data[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g);
                if self.value(*row).requires_grad {
                    let (m, n) = out.rows_cols()?;
                    let mut db = vec![0.0; n];
                    for r in 0..m {
                        for (d, &gv) in db.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                            *d += gv;
                        }
                    }
                    accumulate(grads, *row, &db);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let da: Vec<f64> = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(va).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::Scale(a, f) => {
                let da: Vec<f64> = g.iter().map(|v| v * f).collect();
                accumulate(grads, *a, &da);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let da: Vec<f64> =
                    g.iter().zip(x).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
                accumulate(grads, *a, &da);
            }
            Op::Exp(a) => {
                let da: Vec<f64> = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                accumulate(grads, *a, &da);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let da: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
                accumulate(grads, *a, &da);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.value(*a).len()];
                accumulate(grads, *a, &da);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let da = vec![g[0] / n as f64; n];
                accumulate(grads, *a, &da);
            }
            Op::SumRows(a) => {
                let (m, n) = self.value(*a).rows_cols()?;
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    da[r * n..(r + 1) * n].iter_mut().for_each(|d| *d = g[r]);
                }
                accumulate(grads, *a, &da);
            }
            Op::Softmax(a, t) => {
                let (m, n) = out.rows_cols()?;
                let s = out.data();
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    let sr = &s[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let inner = dot(gr, sr);
                    for j in 0..n {
                        da[r * n + j] = sr[j] * (gr[j] - inner) / t;
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::LogSoftmax(a, t) => {
                let (m, n) = out.rows_cols()?;
                let ls = out.data();
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..n {
                        let p = ls[r * n + j].exp();
                        da[r * n + j] = (gr[j] - p * gsum) / t;
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::Gather(a, indices) => {
                let (m, n) = self.value(*a).rows_cols()?;
                let mut da = vec![0.0; m * n];
                for (r, &i) in indices.iter().enumerate() {
                    da[r * n + i] = g[r];
                }
                accumulate(grads, *a, &da);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
    match &mut grads[id.0] {
        Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e += d),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major `m x k` times `k x n`.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(MisdError::Parameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )))
    }
}

fn softmax_row(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_row(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = z.iter().map(|&v| (v - max) / temperature).collect();
    let lse = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|s| s - lse).collect()
}

/// `softmax(z / temperature)` with max subtraction.
pub fn softmax(z: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if z.is_empty() {
        return Err(MisdError::Parameter("softmax of an empty vector".into()));
    }
    Ok(softmax_row(z, temperature))
}

/// `-log softmax(z / temperature)[label]`.
pub fn cross_entropy(z: &[f64], label: usize, temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    if label >= z.len() {
        return Err(MisdError::Parameter(format!(
            "class index {label} out of range for {} classes",
            z.len()
        )));
    }
    Ok(-log_softmax_row(z, temperature)[label])
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `sign` with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
