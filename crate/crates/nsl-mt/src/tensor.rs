//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Graphs are recorded eagerly on a [`Tape`]: every operation computes its
//! value immediately and appends one node. Because a node is always appended
//! after its parents, walking the tape from the loss node back to index zero
//! visits nodes in reverse topological order exactly once, which is what
//! [`Tape::backward`] does.
//!
//! Tensors are rank 0 (scalar, shape `[]`), rank 1, or rank 2, stored
//! row-major. There is no broadcasting beyond scalar-tensor ops
//! ([`Tape::scale`], [`Tape::add_scalar`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a rank-2 tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: index {index} out of range for size {size}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensor data length {data} does not match shape {shape:?}")]
    DataShapeMismatch { data: usize, shape: Vec<usize> },
}

/// A dense row-major `f64` tensor.
///
/// `grad` is populated on parameter tensors by the trainer after backward
/// passes; repeated accumulation without [`Tensor::zero_grad`] adds up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default)]
    pub requires_grad: bool,
    #[serde(default)]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataShapeMismatch {
                data: data.len(),
                shape,
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Scalar value; panics if the tensor is not rank 0.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        let grad = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (dst, src) in grad.iter_mut().zip(g) {
            *dst += src;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

enum Op {
    Leaf,
    Add,
    Mul,
    AddScalar,
    Scale(f64),
    MatMul,
    Transpose,
    SoftmaxRows,
    LogSoftmaxRows,
    Log,
    Exp,
    Relu,
    Sum,
    Mean,
    Reshape,
    ConcatRows,
    ConcatCols,
    SliceRows { start: usize },
    SliceCols { start: usize },
    EmbeddingLookup { ids: Vec<usize> },
    MaskedFill { mask: Vec<bool> },
    TakePerRow { cols: Vec<usize> },
    NormalizeRows { eps: f64 },
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    op: Op,
}

/// Ordered record of primitive operations with backward rules.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

// ───────────────────────── matmul kernels ─────────────────────────

/// c(m,n) += a(m,k) @ b(k,n)
fn matmul_nn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c(m,n) += a(m,k) @ b(n,k)ᵀ
fn matmul_nt(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// c(k,n) += a(m,k)ᵀ @ b(m,n)
fn matmul_tn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Handle for the node at insertion index `i`; valid while `i < len()`.
    pub fn id_at(i: usize) -> TensorId {
        TensorId(i)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass(es) w.r.t. the node, if any.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, op: Op) -> TensorId {
        self.nodes.push(Node { value, parents, op });
        TensorId(self.nodes.len() - 1)
    }

    /// Inserts a tensor as a graph leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        self.push(t, vec![], Op::Leaf)
    }

    /// Inserts a non-differentiable constant.
    pub fn constant(&mut self, mut t: Tensor) -> TensorId {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn scalar_const(&mut self, x: f64) -> TensorId {
        self.constant(Tensor::scalar(x))
    }

    fn child(&self, parents: &[usize]) -> bool {
        parents.iter().any(|&p| self.nodes[p].value.requires_grad)
    }

    fn result(&mut self, shape: Vec<usize>, data: Vec<f64>, parents: Vec<usize>, op: Op) -> TensorId {
        let requires_grad = self.child(&parents);
        self.push(
            Tensor {
                shape,
                data,
                requires_grad,
                grad: None,
            },
            parents,
            op,
        )
    }

    // ───────────────────────── primitives ─────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        Ok(self.result(shape, data, vec![a.0, b.0], Op::Add))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let shape = ta.shape.clone();
        Ok(self.result(shape, data, vec![a.0, b.0], Op::Mul))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x + c).collect();
        let shape = ta.shape.clone();
        self.result(shape, data, vec![a.0], Op::AddScalar)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x * c).collect();
        let shape = ta.shape.clone();
        self.result(shape, data, vec![a.0], Op::Scale(c))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "matmul",
                shape: ta.shape.clone(),
            });
        }
        if tb.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "matmul",
                shape: tb.shape.clone(),
            });
        }
        if ta.cols() != tb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = vec![0.0; m * n];
        matmul_nn(&mut data, &ta.data, &tb.data, m, k, n);
        Ok(self.result(vec![m, n], data, vec![a.0, b.0], Op::MatMul))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0].value;
        if ta.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "transpose",
                shape: ta.shape.clone(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data[i * n + j];
            }
        }
        Ok(self.result(vec![n, m], data, vec![a.0], Op::Transpose))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0].value;
        if ta.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "softmax_rows",
                shape: ta.shape.clone(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &ta.data[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * n..(i + 1) * n];
            let mut z = 0.0;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - max).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        Ok(self.result(vec![m, n], data, vec![a.0], Op::SoftmaxRows))
    }

    /// Numerically stable row-wise log-softmax (max subtraction). This is the
    /// only sanctioned path to log-probabilities; `log(softmax_rows(x))`
    /// underflows for confident models.
    pub fn log_softmax_rows(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0].value;
        if ta.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "log_softmax_rows",
                shape: ta.shape.clone(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &ta.data[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            for (o, &x) in data[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        Ok(self.result(vec![m, n], data, vec![a.0], Op::LogSoftmaxRows))
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x.ln()).collect();
        let shape = ta.shape.clone();
        self.result(shape, data, vec![a.0], Op::Log)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x.exp()).collect();
        let shape = ta.shape.clone();
        self.result(shape, data, vec![a.0], Op::Exp)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x.max(0.0)).collect();
        let shape = ta.shape.clone();
        self.result(shape, data, vec![a.0], Op::Relu)
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.result(vec![], vec![s], vec![a.0], Op::Sum)
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let ta = &self.nodes[a.0].value;
        let s: f64 = ta.data.iter().sum::<f64>() / ta.numel() as f64;
        self.result(vec![], vec![s], vec![a.0], Op::Mean)
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0].value;
        let numel: usize = shape.iter().product();
        if numel != ta.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape.clone(),
                rhs: shape,
            });
        }
        let data = ta.data.clone();
        Ok(self.result(shape, data, vec![a.0], Op::Reshape))
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = cols).
    pub fn concat(&mut self, axis: usize, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                reason: "no inputs".into(),
            });
        }
        if axis > 1 {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                reason: format!("axis {axis} out of range"),
            });
        }
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.shape.len() != 2 {
                return Err(TensorError::NotMatrix {
                    op: "concat",
                    shape: t.shape.clone(),
                });
            }
        }
        let first = self.nodes[parts[0].0].value.shape.clone();
        let fixed = 1 - axis;
        for &p in &parts[1..] {
            let t = &self.nodes[p.0].value;
            if t.shape[fixed] != first[fixed] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: t.shape.clone(),
                });
            }
        }
        let parent_ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        if axis == 0 {
            let cols = first[1];
            let rows: usize = parent_ids.iter().map(|&p| self.nodes[p].value.rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for &p in &parent_ids {
                data.extend_from_slice(&self.nodes[p].value.data);
            }
            Ok(self.result(vec![rows, cols], data, parent_ids, Op::ConcatRows))
        } else {
            let rows = first[0];
            let cols: usize = parent_ids.iter().map(|&p| self.nodes[p].value.cols()).sum();
            let mut data = vec![0.0; rows * cols];
            let mut offset = 0;
            for &p in &parent_ids {
                let t = &self.nodes[p].value;
                let pc = t.cols();
                for i in 0..rows {
                    data[i * cols + offset..i * cols + offset + pc]
                        .copy_from_slice(&t.data[i * pc..(i + 1) * pc]);
                }
                offset += pc;
            }
            Ok(self.result(vec![rows, cols], data, parent_ids, Op::ConcatCols))
        }
    }

    /// Slices rows or cols `[start, end)` of a rank-2 tensor.
    pub fn slice(
        &mut self,
        a: TensorId,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0].value;
        if ta.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "slice",
                shape: ta.shape.clone(),
            });
        }
        if axis > 1 {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                reason: format!("axis {axis} out of range"),
            });
        }
        if start >= end || end > ta.shape[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                reason: format!(
                    "range {start}..{end} invalid for axis of size {}",
                    ta.shape[axis]
                ),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        if axis == 0 {
            let data = ta.data[start * n..end * n].to_vec();
            Ok(self.result(vec![end - start, n], data, vec![a.0], Op::SliceRows { start }))
        } else {
            let w = end - start;
            let mut data = Vec::with_capacity(m * w);
            for i in 0..m {
                data.extend_from_slice(&ta.data[i * n + start..i * n + end]);
            }
            Ok(self.result(vec![m, w], data, vec![a.0], Op::SliceCols { start }))
        }
    }

    /// Gathers rows of `table` by index: `out[t] = table[ids[t]]`.
    pub fn embedding_lookup(
        &mut self,
        table: TensorId,
        ids: &[usize],
    ) -> Result<TensorId, TensorError> {
        let tt = &self.nodes[table.0].value;
        if tt.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "embedding_lookup",
                shape: tt.shape.clone(),
            });
        }
        let (v, d) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding_lookup",
                    index: id,
                    size: v,
                });
            }
            data.extend_from_slice(&tt.data[id * d..(id + 1) * d]);
        }
        let shape = vec![ids.len(), d];
        Ok(self.result(
            shape,
            data,
            vec![table.0],
            Op::EmbeddingLookup { ids: ids.to_vec() },
        ))
    }

    /// Replaces elements where `mask` is true with `value`; gradient is zero
    /// at masked positions.
    pub fn masked_fill(
        &mut self,
        a: TensorId,
        mask: &[bool],
        value: f64,
    ) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0].value;
        if mask.len() != ta.numel() {
            return Err(TensorError::InvalidArgument {
                op: "masked_fill",
                reason: format!("mask length {} vs {} elements", mask.len(), ta.numel()),
            });
        }
        let data = ta
            .data
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let shape = ta.shape.clone();
        Ok(self.result(
            shape,
            data,
            vec![a.0],
            Op::MaskedFill {
                mask: mask.to_vec(),
            },
        ))
    }

    /// Lower-bounds every element at `min`. Gradient is zero where clamping
    /// engaged (saturation), implemented as a value-derived masked fill.
    pub fn clamp_min(&mut self, a: TensorId, min: f64) -> Result<TensorId, TensorError> {
        let mask: Vec<bool> = self.nodes[a.0].value.data.iter().map(|&x| x < min).collect();
        self.masked_fill(a, &mask, min)
    }

    /// Picks one element per row: `out[r] = a[r, cols[r]]`.
    pub fn take_per_row(&mut self, a: TensorId, cols: &[usize]) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0].value;
        if ta.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "take_per_row",
                shape: ta.shape.clone(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        if cols.len() != m {
            return Err(TensorError::InvalidArgument {
                op: "take_per_row",
                reason: format!("{} indices for {} rows", cols.len(), m),
            });
        }
        let mut data = Vec::with_capacity(m);
        for (i, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "take_per_row",
                    index: c,
                    size: n,
                });
            }
            data.push(ta.data[i * n + c]);
        }
        Ok(self.result(
            vec![m],
            data,
            vec![a.0],
            Op::TakePerRow {
                cols: cols.to_vec(),
            },
        ))
    }

    /// Normalizes each row to zero mean and unit variance (population
    /// variance, stabilized by `eps`). Parameter-free layer normalization.
    pub fn normalize_rows(&mut self, a: TensorId, eps: f64) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0].value;
        if ta.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "normalize_rows",
                shape: ta.shape.clone(),
            });
        }
        if eps <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "normalize_rows",
                reason: format!("eps must be positive, got {eps}"),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &ta.data[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let sigma = (var + eps).sqrt();
            for (o, &x) in data[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (x - mu) / sigma;
            }
        }
        Ok(self.result(vec![m, n], data, vec![a.0], Op::NormalizeRows { eps }))
    }

    // ───────────────────────── backward ─────────────────────────

    /// Accumulates `d loss / d node` for every node that requires gradients.
    /// Repeated calls without a fresh tape keep accumulating.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape.clone()));
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        // Local seed buffers so the accumulated grads of a previous backward
        // call are not consumed as upstream gradients of this one.
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        pending[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            match &mut self.grads[idx] {
                Some(acc) => {
                    for (dst, src) in acc.iter_mut().zip(&g) {
                        *dst += src;
                    }
                }
                slot => *slot = Some(g.clone()),
            }
            self.propagate(idx, &g, &mut pending);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], pending: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let parents = &node.parents;
        let send = |pid: usize, contrib: Vec<f64>, pending: &mut [Option<Vec<f64>>]| {
            if !self.nodes[pid].value.requires_grad {
                return;
            }
            match &mut pending[pid] {
                Some(acc) => {
                    for (dst, src) in acc.iter_mut().zip(&contrib) {
                        *dst += src;
                    }
                }
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                send(parents[0], g.to_vec(), pending);
                send(parents[1], g.to_vec(), pending);
            }
            Op::Mul => {
                let a = &self.nodes[parents[0]].value.data;
                let b = &self.nodes[parents[1]].value.data;
                send(
                    parents[0],
                    g.iter().zip(b).map(|(gi, bi)| gi * bi).collect(),
                    pending,
                );
                send(
                    parents[1],
                    g.iter().zip(a).map(|(gi, ai)| gi * ai).collect(),
                    pending,
                );
            }
            Op::AddScalar => send(parents[0], g.to_vec(), pending),
            Op::Scale(c) => send(parents[0], g.iter().map(|gi| gi * c).collect(), pending),
            Op::MatMul => {
                let a = &self.nodes[parents[0]].value;
                let b = &self.nodes[parents[1]].value;
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                let mut ga = vec![0.0; m * k];
                matmul_nt(&mut ga, g, &b.data, m, n, k);
                send(parents[0], ga, pending);
                let mut gb = vec![0.0; k * n];
                matmul_tn(&mut gb, &a.data, g, m, k, n);
                send(parents[1], gb, pending);
            }
            Op::Transpose => {
                let out = &node.value;
                let (m, n) = (out.rows(), out.cols());
                let mut gp = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gp[j * m + i] = g[i * n + j];
                    }
                }
                send(parents[0], gp, pending);
            }
            Op::SoftmaxRows => {
                let s = &node.value;
                let (m, n) = (s.rows(), s.cols());
                let mut gp = vec![0.0; m * n];
                for i in 0..m {
                    let srow = &s.data[i * n..(i + 1) * n];
                    let grow = &g[i * n..(i + 1) * n];
                    let dot: f64 = srow.iter().zip(grow).map(|(si, gi)| si * gi).sum();
                    for ((o, &si), &gi) in gp[i * n..(i + 1) * n].iter_mut().zip(srow).zip(grow) {
                        *o = si * (gi - dot);
                    }
                }
                send(parents[0], gp, pending);
            }
            Op::LogSoftmaxRows => {
                let out = &node.value;
                let (m, n) = (out.rows(), out.cols());
                let mut gp = vec![0.0; m * n];
                for i in 0..m {
                    let orow = &out.data[i * n..(i + 1) * n];
                    let grow = &g[i * n..(i + 1) * n];
                    let gsum: f64 = grow.iter().sum();
                    for ((o, &oi), &gi) in gp[i * n..(i + 1) * n].iter_mut().zip(orow).zip(grow) {
                        *o = gi - oi.exp() * gsum;
                    }
                }
                send(parents[0], gp, pending);
            }
            Op::Log => {
                let x = &self.nodes[parents[0]].value.data;
                send(
                    parents[0],
                    g.iter().zip(x).map(|(gi, xi)| gi / xi).collect(),
                    pending,
                );
            }
            Op::Exp => {
                let out = &node.value.data;
                send(
                    parents[0],
                    g.iter().zip(out).map(|(gi, oi)| gi * oi).collect(),
                    pending,
                );
            }
            Op::Relu => {
                let x = &self.nodes[parents[0]].value.data;
                send(
                    parents[0],
                    g.iter()
                        .zip(x)
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect(),
                    pending,
                );
            }
            Op::Sum => {
                let n = self.nodes[parents[0]].value.numel();
                send(parents[0], vec![g[0]; n], pending);
            }
            Op::Mean => {
                let n = self.nodes[parents[0]].value.numel();
                send(parents[0], vec![g[0] / n as f64; n], pending);
            }
            Op::Reshape => send(parents[0], g.to_vec(), pending),
            Op::ConcatRows => {
                let mut offset = 0;
                for &pid in parents {
                    let len = self.nodes[pid].value.numel();
                    send(pid, g[offset..offset + len].to_vec(), pending);
                    offset += len;
                }
            }
            Op::ConcatCols => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &pid in parents {
                    let pc = self.nodes[pid].value.cols();
                    let mut gp = vec![0.0; rows * pc];
                    for i in 0..rows {
                        gp[i * pc..(i + 1) * pc]
                            .copy_from_slice(&g[i * total + offset..i * total + offset + pc]);
                    }
                    send(pid, gp, pending);
                    offset += pc;
                }
            }
            Op::SliceRows { start } => {
                let parent = &self.nodes[parents[0]].value;
                let n = parent.cols();
                let mut gp = vec![0.0; parent.numel()];
                gp[start * n..start * n + g.len()].copy_from_slice(g);
                send(parents[0], gp, pending);
            }
            Op::SliceCols { start } => {
                let parent = &self.nodes[parents[0]].value;
                let (m, n) = (parent.rows(), parent.cols());
                let w = node.value.cols();
                let mut gp = vec![0.0; m * n];
                for i in 0..m {
                    gp[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                send(parents[0], gp, pending);
            }
            Op::EmbeddingLookup { ids } => {
                let table = &self.nodes[parents[0]].value;
                let d = table.cols();
                let mut gp = vec![0.0; table.numel()];
                for (t, &id) in ids.iter().enumerate() {
                    for (dst, src) in gp[id * d..(id + 1) * d].iter_mut().zip(&g[t * d..(t + 1) * d])
                    {
                        *dst += src;
                    }
                }
                send(parents[0], gp, pending);
            }
            Op::MaskedFill { mask } => {
                send(
                    parents[0],
                    g.iter()
                        .zip(mask)
                        .map(|(gi, &m)| if m { 0.0 } else { *gi })
                        .collect(),
                    pending,
                );
            }
            Op::TakePerRow { cols } => {
                let parent = &self.nodes[parents[0]].value;
                let n = parent.cols();
                let mut gp = vec![0.0; parent.numel()];
                for (i, &c) in cols.iter().enumerate() {
                    gp[i * n + c] += g[i];
                }
                send(parents[0], gp, pending);
            }
            Op::NormalizeRows { eps } => {
                let x = &self.nodes[parents[0]].value;
                let out = &node.value;
                let (m, n) = (x.rows(), x.cols());
                let mut gp = vec![0.0; m * n];
                for i in 0..m {
                    let xrow = &x.data[i * n..(i + 1) * n];
                    let yrow = &out.data[i * n..(i + 1) * n];
                    let grow = &g[i * n..(i + 1) * n];
                    let mu = xrow.iter().sum::<f64>() / n as f64;
                    let var = xrow.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                    let sigma = (var + eps).sqrt();
                    let gmean = grow.iter().sum::<f64>() / n as f64;
                    let gydot = grow
                        .iter()
                        .zip(yrow)
                        .map(|(gi, yi)| gi * yi)
                        .sum::<f64>()
                        / n as f64;
                    for ((o, &gi), &yi) in
                        gp[i * n..(i + 1) * n].iter_mut().zip(grow).zip(yrow)
                    {
                        *o = (gi - gmean - yi * gydot) / sigma;
                    }
                }
                send(parents[0], gp, pending);
            }
        }
    }
}
