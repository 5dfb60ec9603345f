//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every op appends a node whose parents already exist, so node order is a
//! topological order and the backward sweep simply walks it in reverse.

use crate::error::{Error, Result};
use crate::tensor::dense::{kernels, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// sqrt(2/pi) and the cubic coefficient of the tanh GELU approximation:
/// gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const GELU_CUBIC: f64 = 0.044_715;

/// Variance epsilon used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRowBias(Var, Var),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanRows(Var),
    Sum(Var),
    Reshape(Var),
    DepthwiseConv3x3 {
        x: Var,
        kernel: Var,
        bias: Var,
        height: usize,
        width: usize,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Relu(..) => "relu",
            Op::Gelu(..) => "gelu",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Transpose(..) => "transpose",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::MeanRows(..) => "mean_rows",
            Op::Sum(..) => "sum",
            Op::Reshape(..) => "reshape",
            Op::DepthwiseConv3x3 { .. } => "depthwise_conv3x3",
        }
    }
}

/// Names of every differentiable op, for fault injection and diagnostics.
pub const OP_NAMES: &[&str] = &[
    "matmul",
    "add",
    "mul",
    "scale",
    "add_row_bias",
    "relu",
    "gelu",
    "softmax_rows",
    "layer_norm",
    "cross_entropy",
    "transpose",
    "concat_cols",
    "concat_rows",
    "slice_rows",
    "mean_rows",
    "sum",
    "reshape",
    "depthwise_conv3x3",
];

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A computation graph in element type `T`.
#[derive(Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    corrupt: Option<&'static str>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::dim(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            corrupt: None,
        }
    }

    /// Fault injection for testing the gradient checker: the backward rule of
    /// the named op scales its input gradients by 1.5.
    pub fn corrupt_backward(&mut self, op_name: &str) -> Result<()> {
        let name = OP_NAMES
            .iter()
            .find(|&&n| n == op_name)
            .ok_or_else(|| Error::Config(format!("unknown op {op_name:?}")))?;
        self.corrupt = Some(name);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable leaf (inputs, fixed tables).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn matrix_dims(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(format!("{op}: expected a matrix, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .map_err(|_| shape_err("matmul", self.shape(a), self.shape(b)))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if tb.is_scalar() {
            let s = tb.item();
            Ok(ta.map(|x| f(x, s)))
        } else if ta.is_scalar() {
            let s = ta.item();
            Ok(tb.map(|y| f(s, y)))
        } else {
            Err(shape_err(name, ta.shape(), tb.shape()))
        }
    }

    /// Elementwise sum; shapes must match exactly or one side must be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product; shapes must match exactly or one side must be a scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let k = T::of(factor);
        let out = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    /// `x[m,n] + bias[n]` broadcast over rows (the affine-layer bias).
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.matrix_dims(x, "add_row_bias")?;
        if self.value(bias).len() != n {
            return Err(shape_err("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRowBias(x, bias), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_scalar);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Row-wise softmax over the last axis, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows_eager(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (rows, d) = tx.rows_cols();
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::dim(format!(
                "layer_norm: width {d} vs gain {:?} / bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let eps = T::of(LAYER_NORM_EPS);
        let dn = T::of(d as f64);
        let mut out = Vec::with_capacity(tx.len());
        let mut xhat = Vec::with_capacity(tx.len());
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / dn;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// `-log softmax(logits)[label]` over all entries of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        let c = t.len();
        if label >= c {
            return Err(Error::Index(format!("label {label} out of range for {c} classes")));
        }
        let max = t.data().iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let exps: Vec<T> = t.data().iter().map(|&v| (v - max).exp()).collect();
        let z = exps.iter().fold(T::zero(), |s, &v| s + v);
        let probs: Vec<T> = exps.iter().map(|&e| e / z).collect();
        let loss = z.ln() + max - t.data()[label];
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Feature-axis concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols: no inputs"));
        }
        let (rows, _) = self.matrix_dims(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_cols")?;
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new([rows, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Sequence-axis concatenation of matrices with equal widths.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_rows: no inputs"));
        }
        let (_, cols) = self.matrix_dims(parts[0], "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != cols {
                return Err(shape_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new([rows, cols], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(a, "slice_rows")?;
        if len == 0 || start + len > rows {
            return Err(Error::dim(format!(
                "slice_rows: range {start}..{} outside {rows} rows",
                start + len
            )));
        }
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new([len, cols], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    /// Mean over rows, giving a `[1, n]` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(a, "mean_rows")?;
        let t = self.value(a);
        let inv = T::of(1.0 / rows as f64);
        let mut out = vec![T::zero(); cols];
        for r in 0..rows {
            for (o, &v) in out.iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
        let out = Tensor::new([1, cols], out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::MeanRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Per-channel 3x3 convolution with zero padding over a `height x width`
    /// grid stored channels-last as `[height * width, channels]`.
    /// `kernel` is `[channels, 9]` with tap index `(dy + 1) * 3 + (dx + 1)`.
    pub fn depthwise_conv3x3(&mut self, x: Var, kernel: Var, bias: Var, height: usize, width: usize) -> Result<Var> {
        let (rows, c) = self.matrix_dims(x, "depthwise_conv3x3")?;
        if rows != height * width || self.shape(kernel) != [c, 9] || self.value(bias).len() != c {
            return Err(Error::dim(format!(
                "depthwise_conv3x3: input {:?} on {height}x{width} grid, kernel {:?}, bias {:?}",
                self.shape(x),
                self.shape(kernel),
                self.shape(bias)
            )));
        }
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        let bv = self.value(bias).data();
        let mut out = vec![T::zero(); rows * c];
        for y in 0..height {
            for xx in 0..width {
                let p = y * width + xx;
                let o = &mut out[p * c..(p + 1) * c];
                o.copy_from_slice(bv);
                for_each_tap(y, xx, height, width, |tap, q| {
                    let src = &xv[q * c..(q + 1) * c];
                    for ch in 0..c {
                        o[ch] += kv[ch * 9 + tap] * src[ch];
                    }
                });
            }
        }
        let out = Tensor::new([rows, c], out)?;
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            out,
            Op::DepthwiseConv3x3 {
                x,
                kernel,
                bias,
                height,
                width,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lt.shape().to_vec()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let contributions = self.local_backward(node, &gy)?;
            let factor = if self.corrupt == Some(node.op.name()) {
                Some(T::of(1.5))
            } else {
                None
            };
            for (parent, mut g) in contributions {
                if !self.rg(parent) {
                    continue;
                }
                if let Some(k) = factor {
                    g = g.map(|v| v * k);
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.axpy(T::one(), &g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn local_backward(&self, node: &Node<T>, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let y = &node.value;
        let out = match &node.op {
            Op::Leaf => vec![],
            &Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut v = Vec::new();
                if self.rg(a) {
                    let mut ga = vec![T::zero(); m * k];
                    kernels::matmul_nt(gy.data(), tb.data(), &mut ga, m, n, k);
                    v.push((a, Tensor::new([m, k], ga)?));
                }
                if self.rg(b) {
                    let mut gb = vec![T::zero(); k * n];
                    kernels::matmul_tn(ta.data(), gy.data(), &mut gb, m, k, n);
                    v.push((b, Tensor::new([k, n], gb)?));
                }
                v
            }
            &Op::Add(a, b) => vec![(a, reduce_like(gy, self.value(a))), (b, reduce_like(gy, self.value(b)))],
            &Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let ga = elementwise_product(gy, tb);
                let gb = elementwise_product(gy, ta);
                vec![(a, reduce_like(&ga, ta)), (b, reduce_like(&gb, tb))]
            }
            &Op::Scale(a, k) => vec![(a, gy.map(|g| g * k))],
            &Op::AddRowBias(x, bias) => {
                let n = self.value(bias).len();
                let mut gb = vec![T::zero(); n];
                for row in gy.data().chunks(n) {
                    for (o, &g) in gb.iter_mut().zip(row) {
                        *o += g;
                    }
                }
                let gb = Tensor::new(self.shape(bias).to_vec(), gb)?;
                vec![(x, gy.clone()), (bias, gb)]
            }
            &Op::Relu(a) => {
                let ta = self.value(a);
                let data = ta
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(a, Tensor::new(ta.shape().to_vec(), data)?)]
            }
            &Op::Gelu(a) => {
                let ta = self.value(a);
                let data = ta
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&x, &g)| g * gelu_derivative(x))
                    .collect();
                vec![(a, Tensor::new(ta.shape().to_vec(), data)?)]
            }
            &Op::SoftmaxRows(a) => {
                let (rows, cols) = y.rows_cols();
                let mut gx = vec![T::zero(); y.len()];
                for r in 0..rows {
                    let yr = y.row(r);
                    let gr = gy.row(r);
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&p, &g)| s + p * g);
                    for j in 0..cols {
                        gx[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(a, Tensor::new(y.shape().to_vec(), gx)?)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (rows, d) = y.rows_cols();
                let g = self.value(*gain).data();
                let dn = T::of(d as f64);
                let mut gx = vec![T::zero(); y.len()];
                let mut ggain = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                for r in 0..rows {
                    let gr = gy.row(r);
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        ggain[j] += gr[j] * hr[j];
                        gbias[j] += gr[j];
                        dxhat[j] = gr[j] * g[j];
                        mean_dh += dxhat[j];
                        mean_dh_h += dxhat[j] * hr[j];
                    }
                    mean_dh /= dn;
                    mean_dh_h /= dn;
                    for j in 0..d {
                        gx[r * d + j] = rstd[r] * (dxhat[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                vec![
                    (*x, Tensor::new(y.shape().to_vec(), gx)?),
                    (*gain, Tensor::new(self.shape(*gain).to_vec(), ggain)?),
                    (*bias, Tensor::new(self.shape(*bias).to_vec(), gbias)?),
                ]
            }
            Op::CrossEntropy { logits, label, probs } => {
                let g = gy.item();
                let mut data: Vec<T> = probs.iter().map(|&p| p * g).collect();
                data[*label] -= g;
                vec![(*logits, Tensor::new(self.shape(*logits).to_vec(), data)?)]
            }
            &Op::Transpose(a) => vec![(a, gy.transpose()?)],
            Op::ConcatCols(parts) => {
                let (rows, total) = gy.rows_cols();
                let mut v = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&gy.data()[r * total + offset..r * total + offset + w]);
                    }
                    v.push((p, Tensor::new([rows, w], data)?));
                    offset += w;
                }
                v
            }
            Op::ConcatRows(parts) => {
                let mut v = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let data = gy.data()[offset..offset + n].to_vec();
                    v.push((p, Tensor::new(self.shape(p).to_vec(), data)?));
                    offset += n;
                }
                v
            }
            &Op::SliceRows(a, start) => {
                let (_, cols) = y.rows_cols();
                let mut g = Tensor::zeros(self.shape(a).to_vec());
                g.data_mut()[start * cols..start * cols + gy.len()].copy_from_slice(gy.data());
                vec![(a, g)]
            }
            &Op::MeanRows(a) => {
                let (rows, cols) = self.value(a).rows_cols();
                let inv = T::of(1.0 / rows as f64);
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    data.extend(gy.data().iter().map(|&g| g * inv));
                }
                vec![(a, Tensor::new(self.shape(a).to_vec(), data)?)]
            }
            &Op::Sum(a) => {
                vec![(a, Tensor::full(self.shape(a).to_vec(), gy.item()))]
            }
            &Op::Reshape(a) => vec![(a, gy.reshape(self.shape(a).to_vec())?)],
            &Op::DepthwiseConv3x3 {
                x,
                kernel,
                bias,
                height,
                width,
            } => {
                let c = self.shape(kernel)[0];
                let xv = self.value(x).data();
                let kv = self.value(kernel).data();
                let g = gy.data();
                let mut gx = vec![T::zero(); xv.len()];
                let mut gk = vec![T::zero(); kv.len()];
                let mut gb = vec![T::zero(); c];
                for yy in 0..height {
                    for xx in 0..width {
                        let p = yy * width + xx;
                        let gp = &g[p * c..(p + 1) * c];
                        for ch in 0..c {
                            gb[ch] += gp[ch];
                        }
                        for_each_tap(yy, xx, height, width, |tap, q| {
                            for ch in 0..c {
                                gx[q * c + ch] += kv[ch * 9 + tap] * gp[ch];
                                gk[ch * 9 + tap] += xv[q * c + ch] * gp[ch];
                            }
                        });
                    }
                }
                vec![
                    (x, Tensor::new(self.shape(x).to_vec(), gx)?),
                    (kernel, Tensor::new([c, 9], gk)?),
                    (bias, Tensor::new(self.shape(bias).to_vec(), gb)?),
                ]
            }
        };
        Ok(out)
    }
}

/// Calls `f(tap, neighbour_index)` for every in-bounds 3x3 neighbour of `(y, x)`.
#[inline]
fn for_each_tap(y: usize, x: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize)) {
    for dy in 0..3usize {
        let ny = y as isize + dy as isize - 1;
        if ny < 0 || ny >= h as isize {
            continue;
        }
        for dx in 0..3usize {
            let nx = x as isize + dx as isize - 1;
            if nx < 0 || nx >= w as isize {
                continue;
            }
            f(dy * 3 + dx, ny as usize * w + nx as usize);
        }
    }
}

fn elementwise_product<T: Scalar>(g: &Tensor<T>, other: &Tensor<T>) -> Tensor<T> {
    if other.is_scalar() && g.len() != 1 {
        let s = other.item();
        g.map(|v| v * s)
    } else if g.shape() == other.shape() {
        let data = g.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Tensor::new(g.shape().to_vec(), data).expect("same shape")
    } else {
        // `g` is the scalar-shaped side broadcast against `other`
        let s = g.item();
        other.map(|v| v * s)
    }
}

/// Sums a broadcast gradient back down to the shape of `like`.
fn reduce_like<T: Scalar>(g: &Tensor<T>, like: &Tensor<T>) -> Tensor<T> {
    if g.shape() == like.shape() {
        g.clone()
    } else {
        Tensor::full(like.shape().to_vec(), g.sum())
    }
}

pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_SQRT_2_OVER_PI) * (x + T::of(GELU_CUBIC) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let k = T::of(GELU_SQRT_2_OVER_PI);
    let c = T::of(GELU_CUBIC);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}

/// Eager row-wise softmax (also used for prediction scores).
pub fn softmax_rows_eager<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (rows, _) = t.rows_cols();
    let mut out = Vec::with_capacity(t.len());
    for r in 0..rows {
        let row = t.row(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - max).exp();
            z += e;
            out.push(e);
        }
        for o in &mut out[start..] {
            *o /= z;
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}
