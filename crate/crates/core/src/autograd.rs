//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] borrows a [`ParamStore`] and is told which parameter groups
//! are trainable. Parameters from any other group enter the graph as
//! constants, so no gradient can reach them; this is how the training phases
//! keep their updates confined to one partition, and how teacher outputs are
//! detached (`Graph::detach`).

use std::borrow::Cow;
use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Matrix;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gelu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softplus(Var),
    Ln(Var),
    Exp(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    MeanRows(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Im2Col { x: Var, kernel: usize, stride: usize, pad: usize },
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    grad: bool,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    trainable: Vec<Group>,
    nodes: Vec<Node<'a>>,
    bound: Vec<Option<Var>>,
    touched: BTreeSet<Group>,
    dropout_rng: Option<ChaCha8Rng>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a trainable parameter, `None` if it did not participate.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to a node created by [`Graph::input`].
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradients, one slot per parameter in the store.
    pub fn into_params(self) -> Vec<Option<Matrix>> {
        self.params
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore, trainable: &[Group]) -> Self {
        Graph {
            store,
            trainable: trainable.to_vec(),
            nodes: Vec::with_capacity(1024),
            bound: vec![None; store.len()],
            touched: BTreeSet::new(),
            dropout_rng: None,
        }
    }

    /// Graph with every parameter treated as a constant.
    pub fn inference(store: &'a ParamStore) -> Self {
        Self::new(store, &[])
    }

    pub fn enable_dropout(&mut self, rng: ChaCha8Rng) {
        self.dropout_rng = Some(rng);
    }

    pub fn take_dropout_rng(&mut self) -> Option<ChaCha8Rng> {
        self.dropout_rng.take()
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Parameter groups read by this graph so far.
    pub fn touched_groups(&self) -> &BTreeSet<Group> {
        &self.touched
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).scalar()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, value: Matrix, op: Op, grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that gradients are accumulated into; used for input sensitivities.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copy of `v`'s value with no gradient path back to it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let group = self.store.group(id);
        self.touched.insert(group);
        let trainable = self.trainable.contains(&group);
        self.nodes.push(Node {
            value: Cow::Borrowed(self.store.get(id)),
            op: if trainable { Op::Param(id) } else { Op::Leaf },
            grad: trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::Add(a, b), grad)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::Sub(a, b), grad)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::Mul(a, b), grad)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let grad = self.g(a);
        self.push(value, Op::Scale(a, k), grad)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        let grad = self.g(a);
        self.push(value, Op::AddScalar(a), grad)
    }

    /// Adds a `1×cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row expects a 1x{c} row");
        let mut value = self.value(a).clone();
        let rv = self.value(row).as_slice().to_vec();
        for i in 0..r {
            for (x, b) in value.row_mut(i).iter_mut().zip(&rv) {
                *x += b;
            }
        }
        let grad = self.g(a) || self.g(row);
        self.push(value, Op::AddRow(a, row), grad)
    }

    /// Multiplies every row of `a` elementwise by a `1×cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row expects a 1x{c} row");
        let mut value = self.value(a).clone();
        let rv = self.value(row).as_slice().to_vec();
        for i in 0..r {
            for (x, b) in value.row_mut(i).iter_mut().zip(&rv) {
                *x *= b;
            }
        }
        let grad = self.g(a) || self.g(row);
        self.push(value, Op::MulRow(a, row), grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::MatMul(a, b), grad)
    }

    /// `a · b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::MatMulT(a, b), grad)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let grad = self.g(a);
        self.push(value, Op::Transpose(a), grad)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = if x.is_finite() { (*x - max).exp() } else { 0.0 };
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let grad = self.g(a);
        self.push(value, Op::Softmax(a), grad)
    }

    /// Row-wise standardization without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        let cols = value.cols() as f64;
        let mut inv_std = Vec::with_capacity(value.rows());
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols;
            let r = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * r;
            }
            inv_std.push(r);
        }
        let grad = self.g(a);
        self.push(value, Op::LayerNorm { x: a, inv_std }, grad)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 0.5 * x * (1.0 + gelu_inner(x).tanh()));
        let grad = self.g(a);
        self.push(value, Op::Gelu(a), grad)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let grad = self.g(a);
        self.push(value, Op::LeakyRelu(a, slope), grad)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let grad = self.g(a);
        self.push(value, Op::Sigmoid(a), grad)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let grad = self.g(a);
        self.push(value, Op::Softplus(a), grad)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let grad = self.g(a);
        self.push(value, Op::Ln(a), grad)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let grad = self.g(a);
        self.push(value, Op::Exp(a), grad)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).map(|x| x.powf(p));
        let grad = self.g(a);
        self.push(value, Op::Powf(a, p), grad)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let grad = self.g(a);
        self.push(value, Op::Clamp(a, lo, hi), grad)
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let grad = self.g(a);
        self.push(value, Op::Sum(a), grad)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means as a `1×cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let (r, c) = m.shape();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(m.row(i)) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        let grad = self.g(a);
        self.push(Matrix::from_vec(1, c, out), Op::MeanRows(a), grad)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        let grad = self.g(a);
        self.push(value, Op::SliceRows(a, start), grad)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.cols(), "column slice out of range");
        let mut out = Matrix::zeros(m.rows(), len);
        for i in 0..m.rows() {
            out.row_mut(i).copy_from_slice(&m.row(i)[start..start + len]);
        }
        let grad = self.g(a);
        self.push(out, Op::SliceCols(a, start), grad)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        let grad = parts.iter().any(|&p| self.g(p));
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            grad,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols height mismatch");
            for i in 0..rows {
                out.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
            }
            off += m.cols();
        }
        let grad = parts.iter().any(|&p| self.g(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), grad)
    }

    /// Unfolds a `[len × channels]` sequence into `[len_out × kernel·channels]`
    /// patches so a 1-D convolution becomes one matrix product.
    pub fn im2col(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let m = self.value(a);
        let (len, ch) = m.shape();
        assert!(len + 2 * pad >= kernel, "sequence shorter than kernel");
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let mut out = Matrix::zeros(out_len, kernel * ch);
        for o in 0..out_len {
            for k in 0..kernel {
                let src = (o * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < len {
                    out.row_mut(o)[k * ch..(k + 1) * ch].copy_from_slice(m.row(src as usize));
                }
            }
        }
        let grad = self.g(a);
        self.push(
            out,
            Op::Im2Col {
                x: a,
                kernel,
                stride,
                pad,
            },
            grad,
        )
    }

    /// Inverted dropout; the identity when dropout is disabled on this graph.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if p <= 0.0 {
            return a;
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        let (r, c) = self.nodes[a.0].value.shape();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = self.constant(Matrix::from_vec(r, c, mask));
        self.mul(a, m)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        let mut params: Vec<Option<Matrix>> = Vec::with_capacity(self.store.len());
        params.resize_with(self.store.len(), || None);
        if !self.g(loss) {
            return Gradients {
                nodes: grads,
                params,
            };
        }
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let y: &Matrix = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Param(id) => {
                    params[id.0] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, || g.zip_map(vb, |x, y| x * y));
                    self.acc(&mut grads, *b, || g.zip_map(va, |x, y| x * y));
                }
                Op::Scale(a, k) => self.acc(&mut grads, *a, || g.map(|x| x * k)),
                Op::AddScalar(a) => self.acc(&mut grads, *a, || g.clone()),
                Op::AddRow(a, r) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *r, || col_sums(&g));
                }
                Op::MulRow(a, r) => {
                    let rv = self.value(*r);
                    let va = self.value(*a);
                    self.acc(&mut grads, *a, || {
                        let mut out = g.clone();
                        for i in 0..out.rows() {
                            for (x, s) in out.row_mut(i).iter_mut().zip(rv.as_slice()) {
                                *x *= s;
                            }
                        }
                        out
                    });
                    self.acc(&mut grads, *r, || col_sums(&g.zip_map(va, |x, y| x * y)));
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, || g.matmul_t(vb));
                    self.acc(&mut grads, *b, || va.t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, || g.matmul(vb));
                    self.acc(&mut grads, *b, || g.t_matmul(va));
                }
                Op::Transpose(a) => self.acc(&mut grads, *a, || g.transpose()),
                Op::Softmax(a) => self.acc(&mut grads, *a, || {
                    let mut out = g.zip_map(y, |x, s| x * s);
                    for i in 0..out.rows() {
                        let dot: f64 = out.row(i).iter().sum();
                        let yr = y.row(i).to_vec();
                        for (o, s) in out.row_mut(i).iter_mut().zip(yr) {
                            *o -= s * dot;
                        }
                    }
                    out
                }),
                Op::LayerNorm { x, inv_std } => self.acc(&mut grads, *x, || {
                    let cols = g.cols() as f64;
                    let mut out = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let gr = g.row(i);
                        let yr = y.row(i);
                        let mg = gr.iter().sum::<f64>() / cols;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for ((o, gi), yi) in out.row_mut(i).iter_mut().zip(gr).zip(yr) {
                            *o = inv_std[i] * (gi - mg - yi * mgy);
                        }
                    }
                    out
                }),
                Op::Gelu(a) => {
                    let va = self.value(*a);
                    self.acc(&mut grads, *a, || g.zip_map(va, |gi, x| gi * gelu_grad(x)));
                }
                Op::LeakyRelu(a, slope) => {
                    let va = self.value(*a);
                    self.acc(&mut grads, *a, || {
                        g.zip_map(va, |gi, x| if x > 0.0 { gi } else { gi * slope })
                    });
                }
                Op::Sigmoid(a) => {
                    self.acc(&mut grads, *a, || g.zip_map(y, |gi, s| gi * s * (1.0 - s)))
                }
                Op::Softplus(a) => {
                    let va = self.value(*a);
                    self.acc(&mut grads, *a, || g.zip_map(va, |gi, x| gi * sigmoid(x)));
                }
                Op::Ln(a) => {
                    let va = self.value(*a);
                    self.acc(&mut grads, *a, || g.zip_map(va, |gi, x| gi / x));
                }
                Op::Exp(a) => self.acc(&mut grads, *a, || g.zip_map(y, |gi, e| gi * e)),
                Op::Powf(a, p) => {
                    let va = self.value(*a);
                    self.acc(&mut grads, *a, || {
                        g.zip_map(va, |gi, x| gi * p * x.powf(p - 1.0))
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let va = self.value(*a);
                    self.acc(&mut grads, *a, || {
                        g.zip_map(va, |gi, x| if x > *lo && x < *hi { gi } else { 0.0 })
                    });
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    let s = g.scalar();
                    self.acc(&mut grads, *a, || Matrix::filled(r, c, s));
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    self.acc(&mut grads, *a, || {
                        let mut out = Matrix::zeros(r, c);
                        for i in 0..r {
                            for (o, gi) in out.row_mut(i).iter_mut().zip(g.as_slice()) {
                                *o = gi / r as f64;
                            }
                        }
                        out
                    });
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let start = *start;
                    self.acc(&mut grads, *a, || {
                        let mut out = Matrix::zeros(r, c);
                        out.as_mut_slice()[start * c..start * c + g.len()]
                            .copy_from_slice(g.as_slice());
                        out
                    });
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let start = *start;
                    self.acc(&mut grads, *a, || {
                        let mut out = Matrix::zeros(r, c);
                        for i in 0..r {
                            out.row_mut(i)[start..start + g.cols()].copy_from_slice(g.row(i));
                        }
                        out
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let n = self.shape(p).0;
                        self.acc(&mut grads, p, || g.slice_rows(row, n));
                        row += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        self.acc(&mut grads, p, || {
                            let mut out = Matrix::zeros(r, c);
                            for i in 0..r {
                                out.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                            }
                            out
                        });
                        off += c;
                    }
                }
                Op::Im2Col {
                    x,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (len, ch) = self.shape(*x);
                    self.acc(&mut grads, *x, || {
                        let mut out = Matrix::zeros(len, ch);
                        for o in 0..g.rows() {
                            for k in 0..*kernel {
                                let src = (o * stride + k) as isize - *pad as isize;
                                if src >= 0 && (src as usize) < len {
                                    let gr = &g.row(o)[k * ch..(k + 1) * ch];
                                    for (d, s) in out.row_mut(src as usize).iter_mut().zip(gr) {
                                        *d += s;
                                    }
                                }
                            }
                        }
                        out
                    });
                }
            }
        }
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, f: impl FnOnce() -> Matrix) {
        if !self.nodes[v.0].grad {
            return;
        }
        let contrib = f();
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }
}

fn col_sums(m: &Matrix) -> Matrix {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, x) in out.iter_mut().zip(m.row(i)) {
            *o += x;
        }
    }
    Matrix::from_vec(1, m.cols(), out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu_inner(x: f64) -> f64 {
    GELU_C * (x + 0.044715 * x * x * x)
}

fn gelu_grad(x: f64) -> f64 {
    let t = gelu_inner(x).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{assert_close_gradients, numeric_gradient};

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows)
    }

    /// Runs `f` on a single input leaf and compares against central differences.
    fn check_unary(x: Matrix, f: impl Fn(&mut Graph<'_>, Var) -> Var) {
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let v = g.input(x.clone());
        let out = f(&mut g, v);
        let loss = g.sum(out);
        let grads = g.backward(loss);
        let analytic = grads.wrt(v).unwrap().clone();
        let numeric = numeric_gradient(&x, 1e-5, |xp| {
            let mut g = Graph::inference(&store);
            let v = g.constant(xp.clone());
            let out = f(&mut g, v);
            g.value(out).sum()
        });
        assert_close_gradients("op", &analytic, &numeric, 1e-6);
    }

    #[test]
    fn elementwise_op_gradients() {
        let x = m(&[vec![0.3, -1.2, 2.0], vec![0.7, 1.1, -0.4]]);
        let pos = x.map(|v| v.abs() + 0.2);
        check_unary(x.clone(), |g, v| g.gelu(v));
        check_unary(x.clone(), |g, v| g.leaky_relu(v, 0.2));
        check_unary(x.clone(), |g, v| g.sigmoid(v));
        check_unary(x.clone(), |g, v| g.softplus(v));
        check_unary(x.clone(), |g, v| g.exp(v));
        check_unary(pos.clone(), |g, v| g.ln(v));
        check_unary(pos, |g, v| g.powf(v, -2.0));
        check_unary(x.clone(), |g, v| {
            let s = g.softmax_rows(v);
            let w = g.constant(m(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.9, -1.0]]));
            g.mul(s, w)
        });
        check_unary(x.clone(), |g, v| {
            let n = g.layer_norm_rows(v, 1e-5);
            let w = g.constant(m(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.9, -1.0]]));
            g.mul(n, w)
        });
        check_unary(x, |g, v| {
            let mr = g.mean_rows(v);
            g.mul(mr, mr)
        });
    }

    #[test]
    fn structural_op_gradients() {
        let x = m(&[
            vec![0.3, -1.2, 2.0],
            vec![0.7, 1.1, -0.4],
            vec![-0.5, 0.2, 0.9],
            vec![1.5, -0.3, 0.1],
        ]);
        let w = m(&[
            vec![0.5, -1.0],
            vec![0.25, 0.75],
            vec![-0.3, 0.6],
            vec![1.0, 0.1],
            vec![0.2, -0.2],
            vec![0.4, 0.3],
        ]);
        check_unary(x.clone(), move |g, v| {
            let cols = g.im2col(v, 2, 2, 1);
            let w = g.constant(w.clone());
            let y = g.matmul(cols, w);
            g.mul(y, y)
        });
        check_unary(x.clone(), |g, v| {
            let a = g.slice_rows(v, 1, 2);
            let b = g.slice_cols(v, 0, 2);
            let bt = g.transpose(b);
            let p = g.matmul(bt, v);
            let q = g.matmul_t(a, a);
            let c = g.concat_cols(&[p, q]);
            g.mul(c, c)
        });
        check_unary(x, |g, v| {
            let a = g.slice_rows(v, 0, 1);
            let b = g.slice_rows(v, 3, 1);
            let r = g.concat_rows(&[a, b, a]);
            let s = g.mul_row(v, b);
            let t = g.add_row(s, a);
            let t2 = g.mul(t, t);
            let rs = g.sum(r);
            let rs2 = g.mul(rs, rs);
            let ts = g.sum(t2);
            g.add(ts, rs2)
        });
    }

    #[test]
    fn frozen_groups_get_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Group::Encoder, m(&[vec![1.0, 2.0]]));
        let b = store.add("b", Group::Student, m(&[vec![3.0, 4.0]]));
        let mut g = Graph::new(&store, &[Group::Student]);
        let va = g.param(a);
        let vb = g.param(b);
        let p = g.mul(va, vb);
        let loss = g.sum(p);
        let grads = g.backward(loss);
        assert!(grads.param(a).is_none());
        assert_eq!(grads.param(b).unwrap().as_slice(), &[1.0, 2.0]);
        assert!(g.touched_groups().contains(&Group::Encoder));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Group::P1, m(&[vec![2.0]]));
        let mut g = Graph::new(&store, &[Group::P1]);
        let va = g.param(a);
        let d = g.detach(va);
        let p = g.mul(va, d);
        let grads = g.backward(p);
        // d(a * const(a))/da = a
        assert_eq!(grads.param(a).unwrap().scalar(), 2.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let x = g.constant(m(&[vec![1.0, 2.0, 3.0], vec![f64::NEG_INFINITY, 0.0, 0.0]]));
        let s = g.softmax_rows(x);
        let v = g.value(s);
        assert!((v.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(v.row(1), &[0.0, 0.5, 0.5]);
    }
}
