//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every forward operation as a node holding its output
//! value plus whatever intermediates the backward pass needs. Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order and [`Tape::backward`] is a single reverse sweep that visits each
//! node once.
//!
//! Parameters live in a [`ParamStore`] that the tape borrows; parameter leaves
//! are never copied onto the tape.

use std::collections::HashMap;

use super::tensor::{gemm_into, Scalar, Tensor};
use super::NumError;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.id_of(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Half-open row ranges `[start, end)` describing independent segments
/// (sentences) of a row-stacked matrix.
pub type Segments = [(usize, usize)];

enum Op<T> {
    Constant,
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Gather { table: Var, ids: Vec<u32> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor<T> },
    SegmentSoftmax { a: Var, segs: Vec<(usize, usize)> },
    SegmentPool { w: Var, x: Var, segs: Vec<(usize, usize)> },
    SegmentAttention { q: Var, k: Var, v: Var, segs: Vec<(usize, usize)>, heads: usize, probs: Vec<Vec<T>> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, rstd: Vec<T> },
    SumAll(Var),
    MeanAll(Var),
    Mask(Var, Tensor<T>),
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    inputs: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            params: store.tensors.iter().map(|t| Some(Tensor::zeros(t.shape()))).collect(),
            inputs: HashMap::new(),
        }
    }

    pub fn empty(n_params: usize) -> Self {
        Self {
            params: vec![None; n_params],
            inputs: HashMap::new(),
        }
    }

    /// Gradient for a parameter; `None` means the parameter was not on any
    /// path to the loss (its gradient is exactly zero).
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for a parameter, materializing zeros for untouched ones.
    pub fn param_or_zeros(&self, id: ParamId, shape: &[usize]) -> Tensor<T> {
        self.param(id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Gradient with respect to a leaf created by [`Tape::input`].
    pub fn input(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v.0)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Adds `other` into `self` parameter by parameter.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.params.iter_mut().flatten() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// Recording of a forward computation.
pub struct Tape<'p, T: Scalar> {
    store: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> NumError {
    NumError::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(0.797_884_560_802_865_4); // sqrt(2/pi)
    let inner = c * (x + T::lit(0.044715) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(0.797_884_560_802_865_4);
    let x2 = x * x;
    let inner = c * (x + T::lit(0.044715) * x2 * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::lit(3.0 * 0.044715) * x2);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}

fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}

const LN_EPS: f64 = 1e-5;

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.expect("param tape").get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced on tape");
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Input | Op::Param(_) => true,
            other => self.inputs_of(other).iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_of(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Constant | Op::Input | Op::Param(_) => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Affine(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Gelu(a)
            | Op::SoftmaxRows(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Mask(a, _) => vec![*a],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::SliceRows { a, .. } | Op::SliceCols { a, .. } => vec![*a],
            Op::Gather { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::SegmentSoftmax { a, .. } => vec![*a],
            Op::SegmentPool { w, x, .. } => vec![*w, *x],
            Op::SegmentAttention { q, k, v, .. } => vec![*q, *k, *v],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant)
    }

    /// A leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.store.expect("tape was created without a parameter store");
        debug_assert!(id.0 < store.len());
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, NumError> {
        let out = self.value(a).matmul_t(ta, self.value(b), tb)?;
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Elementwise sum of equal shapes, or a `[rows, cols] + [1, cols]` row broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            let out = self.zip_same("add", a, b, |x, y| x + y)?;
            return Ok(self.push(out, Op::Add(a, b)));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() == 1 && tb.cols() == ta.cols() {
            let mut out = ta.clone();
            let bias = tb.data();
            for r in 0..out.rows() {
                for (o, &b) in out.row_mut(r).iter_mut().zip(bias) {
                    *o += b;
                }
            }
            return Ok(self.push(out, Op::AddRow(a, b)));
        }
        Err(shape_err("add", &sa, &sb))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let (al, be) = (T::lit(alpha), T::lit(beta));
        let out = self.value(a).map(|x| al * x + be);
        self.push(out, Op::Affine(a, al))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Softmax along the last axis (each row independently).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]).shape(), t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::matrix(rows, total, data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]).shape(), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumError> {
        let t = self.value(a);
        if start >= end || end > t.rows() {
            return Err(NumError::Invalid(format!(
                "slice_rows {start}..{end} out of range for shape {:?}",
                t.shape()
            )));
        }
        let c = t.cols();
        let out = Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec());
        Ok(self.push(out, Op::SliceRows { a, start }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumError> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(NumError::Invalid(format!(
                "slice_cols {start}..{end} out of range for shape {:?}",
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::matrix(t.rows(), end - start, data);
        Ok(self.push(out, Op::SliceCols { a, start }))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[u32]) -> Result<Var, NumError> {
        let t = self.value(table);
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            let id = id as usize;
            if id >= t.rows() {
                return Err(NumError::Invalid(format!(
                    "embedding id {id} out of range for table {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::matrix(ids.len(), c, data);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean cross-entropy of row-wise logits against class targets, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumError> {
        let l = self.value(logits);
        if l.rows() != targets.len() {
            return Err(shape_err("cross_entropy", l.shape(), &[targets.len()]));
        }
        let mut probs = l.clone();
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            if t >= l.cols() {
                return Err(NumError::Invalid(format!("target {t} out of range for {} classes", l.cols())));
            }
            let row = l.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            total += (lse - row[t]).to_f64().unwrap_or(f64::NAN);
            softmax_in_place(probs.row_mut(r));
        }
        let n = targets.len().max(1) as f64;
        let out = Tensor::scalar(T::lit(total / n));
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Softmax of a column `[n, 1]` computed independently inside each segment.
    pub fn segment_softmax(&mut self, a: Var, segs: &Segments) -> Result<Var, NumError> {
        let t = self.value(a);
        if t.cols() != 1 {
            return Err(shape_err("segment_softmax", t.shape(), &[t.rows(), 1]));
        }
        let mut out = Tensor::zeros(&[t.rows(), 1]);
        for &(s, e) in segs {
            if s >= e || e > t.rows() {
                return Err(NumError::Invalid(format!("segment {s}..{e} out of range")));
            }
            out.data_mut()[s..e].copy_from_slice(&t.data()[s..e]);
            softmax_in_place(&mut out.data_mut()[s..e]);
        }
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                a,
                segs: segs.to_vec(),
            },
        ))
    }

    /// Per-segment weighted sum: output row `s` is `sum_{i in seg s} w_i * x_i`.
    pub fn segment_pool(&mut self, w: Var, x: Var, segs: &Segments) -> Result<Var, NumError> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.cols() != 1 || tw.rows() != tx.rows() {
            return Err(shape_err("segment_pool", tw.shape(), tx.shape()));
        }
        let d = tx.cols();
        let mut out = Tensor::zeros(&[segs.len(), d]);
        for (si, &(s, e)) in segs.iter().enumerate() {
            if s >= e || e > tx.rows() {
                return Err(NumError::Invalid(format!("segment {s}..{e} out of range")));
            }
            let orow = &mut out.data_mut()[si * d..(si + 1) * d];
            for i in s..e {
                let wi = tw.data()[i];
                for (o, &xv) in orow.iter_mut().zip(tx.row(i)) {
                    *o += wi * xv;
                }
            }
        }
        Ok(self.push(
            out,
            Op::SegmentPool {
                w,
                x,
                segs: segs.to_vec(),
            },
        ))
    }

    /// Multi-head scaled dot-product self-attention restricted to each segment.
    ///
    /// `q`, `k`, `v` are `[n, d]` with `d` divisible by `heads`. Rows outside every
    /// segment produce zeros.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, segs: &Segments, heads: usize) -> Result<Var, NumError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() {
            return Err(shape_err("segment_attention", tq.shape(), tk.shape()));
        }
        let (n, d) = (tq.rows(), tq.cols());
        if heads == 0 || d % heads != 0 {
            return Err(NumError::Invalid(format!("width {d} not divisible into {heads} heads")));
        }
        let dh = d / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut out = Tensor::zeros(&[n, d]);
        let mut probs = Vec::with_capacity(segs.len() * heads);
        for &(s, e) in segs {
            if s >= e || e > n {
                return Err(NumError::Invalid(format!("segment {s}..{e} out of range")));
            }
            let len = e - s;
            for h in 0..heads {
                let off = h * dh;
                let mut p = vec![T::zero(); len * len];
                for i in 0..len {
                    let qi = &tq.row(s + i)[off..off + dh];
                    let prow = &mut p[i * len..(i + 1) * len];
                    for (j, pj) in prow.iter_mut().enumerate() {
                        let kj = &tk.row(s + j)[off..off + dh];
                        *pj = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    }
                    softmax_in_place(prow);
                }
                for i in 0..len {
                    let prow = &p[i * len..(i + 1) * len];
                    let orow = &mut out.row_mut(s + i)[off..off + dh];
                    for (j, &pij) in prow.iter().enumerate() {
                        let vj = &tv.row(s + j)[off..off + dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += pij * vv;
                        }
                    }
                }
                probs.push(p);
            }
        }
        Ok(self.push(
            out,
            Op::SegmentAttention {
                q,
                k,
                v,
                segs: segs.to_vec(),
                heads,
                probs,
            },
        ))
    }

    /// Attention probabilities cached by [`Tape::segment_attention`], indexed
    /// `[segment][head]` as a row-major `len x len` matrix.
    pub fn attention_probs(&self, v: Var) -> Option<Vec<Vec<&[T]>>> {
        match &self.nodes[v.0].op {
            Op::SegmentAttention { segs, heads, probs, .. } => Some(
                (0..segs.len())
                    .map(|s| (0..*heads).map(|h| probs[s * heads + h].as_slice()).collect())
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Row-wise layer normalization with learned gain and bias (`[1, d]` each).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        if tg.len() != d || tb.len() != d {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let mut xhat = tx.clone();
        let mut rstd = Vec::with_capacity(tx.rows());
        let eps = T::lit(LN_EPS);
        let dn = T::lit(d as f64);
        for r in 0..tx.rows() {
            let row = xhat.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * rs;
            }
            rstd.push(rs);
        }
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for ((o, &g), &b) in out.row_mut(r).iter_mut().zip(tg.data()).zip(tb.data()) {
                *o = *o * g + b;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum::<T>() / T::lit(t.len().max(1) as f64);
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    /// Elementwise multiplication by a fixed mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Tensor<T>) -> Result<Var, NumError> {
        let t = self.value(a);
        if t.shape() != mask.shape() {
            return Err(shape_err("mask", t.shape(), mask.shape()));
        }
        let data = t.data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mask(a, mask)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n_params = self.store.map_or(0, ParamStore::len);
        let mut result = Gradients::empty(n_params);
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    result.inputs.insert(idx, g);
                }
                Op::Param(id) => match &mut result.params[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                },
                op => self.backprop(op, idx, &g, &mut grads),
            }
        }
        Ok(result)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> &'g mut Tensor<T> {
        let shape = self.value(v).shape().to_vec();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape))
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl Fn(usize) -> T) {
        if !self.wants(v) {
            return;
        }
        let slot = self.slot(grads, v);
        for (i, s) in slot.data_mut().iter_mut().enumerate() {
            *s += f(i);
        }
    }

    fn backprop(&self, op: &Op<T>, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = self.nodes[idx].value.as_ref().expect("op output");
        match op {
            Op::Constant | Op::Input | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let slot = self.slot(grads, *a);
                    if !*ta {
                        gemm_into(g, false, vb, !*tb, slot.data_mut(), T::one());
                    } else {
                        gemm_into(vb, *tb, g, true, slot.data_mut(), T::one());
                    }
                }
                if self.wants(*b) {
                    let slot = self.slot(grads, *b);
                    if !*tb {
                        gemm_into(va, !*ta, g, false, slot.data_mut(), T::one());
                    } else {
                        gemm_into(g, true, va, *ta, slot.data_mut(), T::one());
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate_with(grads, *a, |i| g.data()[i]);
                self.accumulate_with(grads, *b, |i| g.data()[i]);
            }
            Op::AddRow(a, b) => {
                self.accumulate_with(grads, *a, |i| g.data()[i]);
                if self.wants(*b) {
                    let slot = self.slot(grads, *b);
                    for r in 0..g.rows() {
                        for (s, &gv) in slot.data_mut().iter_mut().zip(g.row(r)) {
                            *s += gv;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                self.accumulate_with(grads, *a, |i| g.data()[i]);
                self.accumulate_with(grads, *b, |i| -g.data()[i]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |i| g.data()[i] * vb.data()[i]);
                self.accumulate_with(grads, *b, |i| g.data()[i] * va.data()[i]);
            }
            Op::Affine(a, alpha) => {
                self.accumulate_with(grads, *a, |i| g.data()[i] * *alpha);
            }
            Op::Sigmoid(a) => {
                self.accumulate_with(grads, *a, |i| {
                    let y = out.data()[i];
                    g.data()[i] * y * (T::one() - y)
                });
            }
            Op::Tanh(a) => {
                self.accumulate_with(grads, *a, |i| {
                    let y = out.data()[i];
                    g.data()[i] * (T::one() - y * y)
                });
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                self.accumulate_with(grads, *a, |i| g.data()[i] * gelu_grad(x.data()[i]));
            }
            Op::SoftmaxRows(a) => {
                if self.wants(*a) {
                    let slot = self.slot(grads, *a);
                    let c = out.cols();
                    for r in 0..out.rows() {
                        let (y, gr) = (out.row(r), g.row(r));
                        let dot: T = y.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        let srow = &mut slot.data_mut()[r * c..(r + 1) * c];
                        for ((s, &yv), &gv) in srow.iter_mut().zip(y).zip(gr) {
                            *s += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.wants(p) {
                        let slot = self.slot(grads, p);
                        for r in 0..g.rows() {
                            for (s, &gv) in slot.row_mut(r).iter_mut().zip(&g.row(r)[off..off + pc]) {
                                *s += gv;
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        let slot = self.slot(grads, p);
                        for (s, &gv) in slot.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                            *s += gv;
                        }
                    }
                    off += n;
                }
            }
            Op::SliceRows { a, start } => {
                if self.wants(*a) {
                    let c = g.cols();
                    let slot = self.slot(grads, *a);
                    let dst = &mut slot.data_mut()[start * c..start * c + g.len()];
                    for (s, &gv) in dst.iter_mut().zip(g.data()) {
                        *s += gv;
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if self.wants(*a) {
                    let w = g.cols();
                    let slot = self.slot(grads, *a);
                    for r in 0..g.rows() {
                        for (s, &gv) in slot.row_mut(r)[*start..start + w].iter_mut().zip(g.row(r)) {
                            *s += gv;
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let slot = self.slot(grads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, &gv) in slot.row_mut(id as usize).iter_mut().zip(g.row(r)) {
                            *s += gv;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if self.wants(*logits) {
                    let scale = g.item() / T::lit(targets.len().max(1) as f64);
                    let slot = self.slot(grads, *logits);
                    for (r, &t) in targets.iter().enumerate() {
                        for (c, (s, &p)) in slot.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                            let onehot = if c == t { T::one() } else { T::zero() };
                            *s += scale * (p - onehot);
                        }
                    }
                }
            }
            Op::SegmentSoftmax { a, segs } => {
                if self.wants(*a) {
                    let slot = self.slot(grads, *a);
                    for &(s, e) in segs {
                        let y = &out.data()[s..e];
                        let gy = &g.data()[s..e];
                        let dot: T = y.iter().zip(gy).map(|(&yv, &gv)| yv * gv).sum();
                        for (i, d) in slot.data_mut()[s..e].iter_mut().enumerate() {
                            *d += y[i] * (gy[i] - dot);
                        }
                    }
                }
            }
            Op::SegmentPool { w, x, segs } => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                if self.wants(*w) {
                    let slot = self.slot(grads, *w);
                    for (si, &(s, e)) in segs.iter().enumerate() {
                        let gs = g.row(si);
                        for i in s..e {
                            let dot: T = gs.iter().zip(tx.row(i)).map(|(&a, &b)| a * b).sum();
                            slot.data_mut()[i] += dot;
                        }
                    }
                }
                if self.wants(*x) {
                    let slot = self.slot(grads, *x);
                    for (si, &(s, e)) in segs.iter().enumerate() {
                        let gs = g.row(si);
                        for i in s..e {
                            let wi = tw.data()[i];
                            for (d, &gv) in slot.row_mut(i).iter_mut().zip(gs) {
                                *d += wi * gv;
                            }
                        }
                    }
                }
            }
            Op::SegmentAttention { q, k, v, segs, heads, probs } => {
                self.backprop_attention(*q, *k, *v, segs, *heads, probs, g, grads);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let tg = self.value(*gamma);
                let d = xhat.cols();
                if self.wants(*gamma) {
                    let slot = self.slot(grads, *gamma);
                    for r in 0..g.rows() {
                        for ((s, &gv), &xh) in slot.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *s += gv * xh;
                        }
                    }
                }
                if self.wants(*beta) {
                    let slot = self.slot(grads, *beta);
                    for r in 0..g.rows() {
                        for (s, &gv) in slot.data_mut().iter_mut().zip(g.row(r)) {
                            *s += gv;
                        }
                    }
                }
                if self.wants(*x) {
                    let slot = self.slot(grads, *x);
                    let dn = T::lit(d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..g.rows() {
                        for ((dx, &gv), &gm) in dxhat.iter_mut().zip(g.row(r)).zip(tg.data()) {
                            *dx = gv * gm;
                        }
                        let xh = xhat.row(r);
                        let mean_d: T = dxhat.iter().copied().sum::<T>() / dn;
                        let mean_dx: T = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / dn;
                        for ((s, &dx), &xv) in slot.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                            *s += rstd[r] * (dx - mean_d - xv * mean_dx);
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let gv = g.item();
                self.accumulate_with(grads, *a, |_| gv);
            }
            Op::MeanAll(a) => {
                let n = T::lit(self.value(*a).len().max(1) as f64);
                let gv = g.item() / n;
                self.accumulate_with(grads, *a, |_| gv);
            }
            Op::Mask(a, mask) => {
                self.accumulate_with(grads, *a, |i| g.data()[i] * mask.data()[i]);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        segs: &[(usize, usize)],
        heads: usize,
        probs: &[Vec<T>],
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        let dh = d / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let n = tq.rows();
        let mut dq = Tensor::zeros(&[n, d]);
        let mut dk = Tensor::zeros(&[n, d]);
        let mut dv = Tensor::zeros(&[n, d]);
        for (si, &(s, e)) in segs.iter().enumerate() {
            let len = e - s;
            for h in 0..heads {
                let off = h * dh;
                let p = &probs[si * heads + h];
                // dV_j += sum_i P_ij dO_i
                for i in 0..len {
                    let go = &g.row(s + i)[off..off + dh];
                    for j in 0..len {
                        let pij = p[i * len + j];
                        for (dvv, &gv) in dv.row_mut(s + j)[off..off + dh].iter_mut().zip(go) {
                            *dvv += pij * gv;
                        }
                    }
                }
                for i in 0..len {
                    let go = &g.row(s + i)[off..off + dh];
                    let prow = &p[i * len..(i + 1) * len];
                    let dp: Vec<T> = (0..len)
                        .map(|j| go.iter().zip(&tv.row(s + j)[off..off + dh]).map(|(&a, &b)| a * b).sum())
                        .collect();
                    let dot: T = prow.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                    for j in 0..len {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let kj = &tk.row(s + j)[off..off + dh];
                        for (dqv, &kv) in dq.row_mut(s + i)[off..off + dh].iter_mut().zip(kj) {
                            *dqv += ds * kv;
                        }
                        let qi = &tq.row(s + i)[off..off + dh];
                        for (dkv, &qv) in dk.row_mut(s + j)[off..off + dh].iter_mut().zip(qi) {
                            *dkv += ds * qv;
                        }
                    }
                }
            }
        }
        for (var, grad) in [(q, dq), (k, dk), (v, dv)] {
            if self.wants(var) {
                self.slot(grads, var).add_assign(&grad);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v)
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.input(x).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t(&[1, 2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(NumError::NonScalarLoss(_))));
    }

    #[test]
    fn softmax_of_zeros_is_uniform_and_shift_invariant() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let s = tape.softmax_rows(z);
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let x = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 17.5).collect();
        let a = softmax(&x);
        let b = softmax(&shifted);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-6);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_four_class_cross_entropy_is_ln4() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(t(&[1, 4], &[0.7, 0.7, 0.7, 0.7]));
        for target in 0..4 {
            let ce = tape.cross_entropy(logits, &[target]).unwrap();
            assert!((tape.value(ce).item() - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_survives_huge_logits() {
        let mut tape = Tape::<f32>::new();
        let logits = tape.input(Tensor::from_f64(&[1, 3], &[1000.0, 0.0, -1000.0]));
        let ce = tape.cross_entropy(logits, &[1]).unwrap();
        assert!((tape.value(ce).item() - 1000.0).abs() < 1e-3);
        let g = tape.backward(ce).unwrap();
        assert!(g.input(logits).unwrap().all_finite());
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        let msg = tape.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn unused_parameter_gets_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let used = store.add("used", t(&[1, 2], &[1.0, 2.0]));
        let unused = store.add("unused", t(&[1, 2], &[3.0, 4.0]));
        let mut tape = Tape::with_params(&store);
        let u = tape.param(used);
        let _ = tape.param(unused);
        let s = tape.sum_all(u);
        let g = tape.backward(s).unwrap();
        assert!(g.param(unused).is_none());
        assert_eq!(g.param_or_zeros(unused, &[1, 2]).data(), &[0.0, 0.0]);
        assert_eq!(g.param(used).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn single_element_segments_attend_to_themselves() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3, 4], &[0.1, 0.2, 0.3, 0.4, 1.0, -1.0, 0.5, 0.5, 2.0, 0.0, 0.0, 1.0]));
        let out = tape.segment_attention(x, x, x, &[(0, 1), (1, 3)], 2).unwrap();
        let probs = tape.attention_probs(out).unwrap();
        assert_eq!(probs[0][0], &[1.0]);
        assert_eq!(probs[0][1], &[1.0]);
        assert_eq!(&tape.value(out).data()[..4], &[0.1, 0.2, 0.3, 0.4]);
    }
}
