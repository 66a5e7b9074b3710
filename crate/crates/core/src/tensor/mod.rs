//! Dense 2-D tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an arena of operation nodes built during the forward pass;
//! [`Tape::backward`] walks it in reverse, accumulating gradients into the
//! [`ParamStore`] entries the leaves were bound to. Everything is 64-bit
//! and single-threaded with fixed reduction order, so results are
//! bit-reproducible run to run.
//!
//! Vectors are column tensors of shape (n, 1); scalars are (1, 1).

mod optim;

pub use optim::Adam;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("shape {shape:?} does not hold {len} values")]
    BadShape { shape: [usize; 2], len: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("parameter {0:?} has no gradient; run backward before stepping")]
    MissingGradient(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}

/// A dense row-major matrix of f64 values, optionally carrying a gradient
/// buffer of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows * cols != data.len() {
            return Err(TensorError::BadShape {
                shape: [rows, cols],
                len: data.len(),
            });
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        match &mut self.grad {
            Some(grad) => {
                for (g, d) in grad.iter_mut().zip(delta) {
                    *g += d;
                }
            }
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

/// Named parameter tensors shared by a model and its optimizer.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its handle. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter {name}"
        );
        self.entries.push((name, tensor.with_grad()));
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.clear_grad();
        }
    }

    /// Total number of scalar parameters.
    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf { param: Option<ParamId> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    ConcatRows(usize, usize),
    SliceRows { src: usize, start: usize, end: usize },
    StackCols(Vec<usize>),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    SoftmaxRows(usize),
    Mean(usize),
    Sum(usize),
    Sqrt(usize),
    SquaredError(usize, usize),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// Records the forward computation; one tape per forward/backward cycle.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        let node = &self.nodes[var.0];
        [node.rows, node.cols]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a store parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let tensor = store.get(id);
        self.push(
            tensor.rows,
            tensor.cols,
            tensor.data.clone(),
            Op::Leaf { param: Some(id) },
        )
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.rows,
            tensor.cols,
            tensor.data.clone(),
            Op::Leaf { param: None },
        )
    }

    pub fn constant_column(&mut self, values: &[f64]) -> Var {
        self.push(values.len(), 1, values.to_vec(), Op::Leaf { param: None })
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(1, 1, vec![value], Op::Leaf { param: None })
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(usize, usize), TensorError> {
        let (ra, ca) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let (rb, cb) = (self.nodes[b.0].rows, self.nodes[b.0].cols);
        if ra != rb || ca != cb {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                left: [ra, ca],
                right: [rb, cb],
            });
        }
        Ok((ra, ca))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.binary_same_shape("add", a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(rows, cols, value, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.binary_same_shape("sub", a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(rows, cols, value, Op::Sub(a.0, b.0)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.binary_same_shape("mul", a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(rows, cols, value, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|x| x * factor).collect();
        let (rows, cols) = (node.rows, node.cols);
        self.push(rows, cols, value, Op::Scale(a.0, factor))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ra, ca) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let (rb, cb) = (self.nodes[b.0].rows, self.nodes[b.0].cols);
        if ca != rb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: [ra, ca],
                right: [rb, cb],
            });
        }
        let value = matmul_raw(&self.nodes[a.0].value, &self.nodes[b.0].value, ra, ca, cb);
        Ok(self.push(ra, cb, value, Op::Matmul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let (rows, cols) = (node.rows, node.cols);
        let mut value = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                value[c * rows + r] = node.value[r * cols + c];
            }
        }
        self.push(cols, rows, value, Op::Transpose(a.0))
    }

    /// Vertical concatenation: (r1 x c) over (r2 x c).
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ra, ca) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let (rb, cb) = (self.nodes[b.0].rows, self.nodes[b.0].cols);
        if ca != cb {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                left: [ra, ca],
                right: [rb, cb],
            });
        }
        let mut value = Vec::with_capacity((ra + rb) * ca);
        value.extend_from_slice(&self.nodes[a.0].value);
        value.extend_from_slice(&self.nodes[b.0].value);
        Ok(self.push(ra + rb, ca, value, Op::ConcatRows(a.0, b.0)))
    }

    /// Rows [start, end) of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (rows, cols) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        if start >= end || end > rows {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                left: [rows, cols],
                right: [start, end],
            });
        }
        let value = self.nodes[a.0].value[start * cols..end * cols].to_vec();
        Ok(self.push(
            end - start,
            cols,
            value,
            Op::SliceRows {
                src: a.0,
                start,
                end,
            },
        ))
    }

    /// Builds an (r x n) matrix out of n column vectors of shape (r x 1).
    pub fn stack_cols(&mut self, columns: &[Var]) -> Result<Var, TensorError> {
        assert!(!columns.is_empty(), "stack_cols needs at least one column");
        let rows = self.nodes[columns[0].0].rows;
        for &v in columns {
            let (r, c) = (self.nodes[v.0].rows, self.nodes[v.0].cols);
            if r != rows || c != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_cols",
                    left: [rows, 1],
                    right: [r, c],
                });
            }
        }
        let n = columns.len();
        let mut value = vec![0.0; rows * n];
        for (k, &v) in columns.iter().enumerate() {
            for r in 0..rows {
                value[r * n + k] = self.nodes[v.0].value[r];
            }
        }
        Ok(self.push(
            rows,
            n,
            value,
            Op::StackCols(columns.iter().map(|v| v.0).collect()),
        ))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&x| sigmoid(x)).collect();
        let (rows, cols) = (node.rows, node.cols);
        self.push(rows, cols, value, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&x| x.tanh()).collect();
        let (rows, cols) = (node.rows, node.cols);
        self.push(rows, cols, value, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&x| x.max(0.0)).collect();
        let (rows, cols) = (node.rows, node.cols);
        self.push(rows, cols, value, Op::Relu(a.0))
    }

    /// Softmax along the last axis (per row).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let (rows, cols) = (node.rows, node.cols);
        let mut value = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &node.value[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (c, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                value[r * cols + c] = e;
                denom += e;
            }
            for c in 0..cols {
                value[r * cols + c] /= denom;
            }
        }
        self.push(rows, cols, value, Op::SoftmaxRows(a.0))
    }

    /// Mean over all elements; returns a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let mean = node.value.iter().sum::<f64>() / node.value.len() as f64;
        self.push(1, 1, vec![mean], Op::Mean(a.0))
    }

    /// Sum over all elements; returns a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let sum = node.value.iter().sum::<f64>();
        self.push(1, 1, vec![sum], Op::Sum(a.0))
    }

    /// Elementwise square root. The derivative at 0 is defined as 0 so that
    /// losses built on sqrt stay finite at their minimum.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&x| x.max(0.0).sqrt()).collect();
        let (rows, cols) = (node.rows, node.cols);
        self.push(rows, cols, value, Op::Sqrt(a.0))
    }

    /// Sum of squared differences; returns a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("squared_error", a, b)?;
        let sse = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
        Ok(self.push(1, 1, vec![sse], Op::SquaredError(a.0, b.0)))
    }

    /// Reverse pass seeded with d(loss)/d(loss) = `seed`. Gradients are
    /// summed into the bound parameters of `store` and the tape is cleared.
    pub fn backward_scaled(
        &mut self,
        loss: Var,
        seed: f64,
        store: &mut ParamStore,
    ) -> Result<(), TensorError> {
        let node = &self.nodes[loss.0];
        if node.rows != 1 || node.cols != 1 {
            return Err(TensorError::NonScalarLoss([node.rows, node.cols]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![seed]);

        for i in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            // Leaves flush into the store; other ops propagate to inputs.
            match &self.nodes[i].op {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        store.get_mut(*id).accumulate_grad(&grad);
                    }
                }
                op => self.propagate(i, op, &grad, &mut grads),
            }
        }
        self.nodes.clear();
        Ok(())
    }

    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), TensorError> {
        self.backward_scaled(loss, 1.0, store)
    }

    fn propagate(&self, i: usize, op: &Op, grad: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let add_into = |grads: &mut [Option<Vec<f64>>], j: usize, delta: &[f64]| {
            match &mut grads[j] {
                Some(buffer) => {
                    for (g, d) in buffer.iter_mut().zip(delta) {
                        *g += d;
                    }
                }
                slot => *slot = Some(delta.to_vec()),
            }
        };
        match op {
            Op::Leaf { .. } => unreachable!("leaves handled by backward"),
            Op::Add(a, b) => {
                add_into(grads, *a, grad);
                add_into(grads, *b, grad);
            }
            Op::Sub(a, b) => {
                add_into(grads, *a, grad);
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                add_into(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&self.nodes[*b].value)
                    .map(|(g, y)| g * y)
                    .collect();
                let db: Vec<f64> = grad
                    .iter()
                    .zip(&self.nodes[*a].value)
                    .map(|(g, x)| g * x)
                    .collect();
                add_into(grads, *a, &da);
                add_into(grads, *b, &db);
            }
            Op::Scale(a, factor) => {
                let da: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                add_into(grads, *a, &da);
            }
            Op::Matmul(a, b) => {
                let (ra, ca) = (self.nodes[*a].rows, self.nodes[*a].cols);
                let cb = self.nodes[*b].cols;
                // dA = dC . B^T, dB = A^T . dC
                let bt = transpose_raw(&self.nodes[*b].value, ca, cb);
                let da = matmul_raw(grad, &bt, ra, cb, ca);
                let at = transpose_raw(&self.nodes[*a].value, ra, ca);
                let db = matmul_raw(&at, grad, ca, ra, cb);
                add_into(grads, *a, &da);
                add_into(grads, *b, &db);
            }
            Op::Transpose(a) => {
                let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
                let da = transpose_raw(grad, rows, cols);
                add_into(grads, *a, &da);
            }
            Op::ConcatRows(a, b) => {
                let split = self.nodes[*a].value.len();
                add_into(grads, *a, &grad[..split]);
                add_into(grads, *b, &grad[split..]);
            }
            Op::SliceRows { src, start, end } => {
                let cols = self.nodes[i].cols;
                let mut da = vec![0.0; self.nodes[*src].value.len()];
                da[start * cols..end * cols].copy_from_slice(grad);
                add_into(grads, *src, &da);
            }
            Op::StackCols(columns) => {
                let n = columns.len();
                let rows = self.nodes[i].rows;
                for (k, &src) in columns.iter().enumerate() {
                    let da: Vec<f64> = (0..rows).map(|r| grad[r * n + k]).collect();
                    add_into(grads, src, &da);
                }
            }
            Op::Sigmoid(a) => {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&self.nodes[i].value)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                add_into(grads, *a, &da);
            }
            Op::Tanh(a) => {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&self.nodes[i].value)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                add_into(grads, *a, &da);
            }
            Op::Relu(a) => {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&self.nodes[*a].value)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                add_into(grads, *a, &da);
            }
            Op::SoftmaxRows(a) => {
                let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
                let y = &self.nodes[i].value;
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    let base = r * cols;
                    let dot: f64 = (0..cols).map(|c| grad[base + c] * y[base + c]).sum();
                    for c in 0..cols {
                        da[base + c] = y[base + c] * (grad[base + c] - dot);
                    }
                }
                add_into(grads, *a, &da);
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].value.len() as f64;
                let g = grad[0] / n;
                let da = vec![g; self.nodes[*a].value.len()];
                add_into(grads, *a, &da);
            }
            Op::Sum(a) => {
                let da = vec![grad[0]; self.nodes[*a].value.len()];
                add_into(grads, *a, &da);
            }
            Op::Sqrt(a) => {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&self.nodes[i].value)
                    .map(|(g, y)| if *y > 0.0 { g / (2.0 * y) } else { 0.0 })
                    .collect();
                add_into(grads, *a, &da);
            }
            Op::SquaredError(a, b) => {
                let g = grad[0];
                let da: Vec<f64> = self.nodes[*a]
                    .value
                    .iter()
                    .zip(&self.nodes[*b].value)
                    .map(|(x, y)| 2.0 * g * (x - y))
                    .collect();
                let db: Vec<f64> = da.iter().map(|d| -d).collect();
                add_into(grads, *a, &da);
                add_into(grads, *b, &db);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matmul_raw(a: &[f64], b: &[f64], ra: usize, ca: usize, cb: usize) -> Vec<f64> {
    if cb == 1 {
        return matvec_raw(a, b, ra, ca);
    }
    let mut out = vec![0.0; ra * cb];
    for i in 0..ra {
        for k in 0..ca {
            let aik = a[i * ca + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * cb..(k + 1) * cb];
            let orow = &mut out[i * cb..(i + 1) * cb];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

// Matrix-vector products dominate the recurrent cells; four independent
// accumulators let the dot products pipeline. The reduction order is fixed,
// so results stay run-to-run identical.
fn matvec_raw(a: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * cols..(i + 1) * cols];
        let mut acc = [0.0f64; 4];
        let chunks = cols / 4;
        for c in 0..chunks {
            let base = c * 4;
            acc[0] += row[base] * x[base];
            acc[1] += row[base + 1] * x[base + 1];
            acc[2] += row[base + 2] * x[base + 2];
            acc[3] += row[base + 3] * x[base + 3];
        }
        let mut tail = 0.0;
        for j in chunks * 4..cols {
            tail += row[j] * x[j];
        }
        *o = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
    }
    out
}

fn transpose_raw(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}
