use super::{Result, Tensor, TensorError};
use std::fmt;
use std::rc::Rc;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// An operation whose forward value is computed outside the tape and whose
/// local gradient is supplied by the implementor.
pub trait CustomOp: fmt::Debug {
    /// Returns one gradient buffer per input, each the length of that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Exp,
    Sigmoid,
    Silu,
    Softplus,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddRowBias(Var, Var),
    ScaleRows(Var, Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<(usize, usize)>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    GatherElems(Var, Vec<usize>),
    Propagate(Var, Rc<Vec<Vec<usize>>>),
    Sum(Var),
    SmoothL1(Var, Vec<f64>, f64),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run gradient tape. Nodes are appended in evaluation order, which
/// is a topological order, so backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient-tracked input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Stop-gradient: same value, no gradient flows back through the result.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Accumulated gradient of a tracked leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    fn unary(&mut self, u: Unary, x: Var) -> Var {
        let f = match u {
            Unary::Exp => f64::exp,
            Unary::Sigmoid => sigmoid,
            Unary::Silu => |v: f64| v * sigmoid(v),
            Unary::Softplus => softplus,
        };
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(src.shape().to_vec(), data).unwrap();
        let rg = self.rg(x);
        self.push(out, Op::Unary(u, x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(Unary::Silu, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }

    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let f = match op {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
            Binary::Div => |x: f64, y: f64| x / y,
        };
        let out = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.len() == 1 {
            let y = tb.data()[0];
            let data = ta.data().iter().map(|&x| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if ta.len() == 1 {
            let x = ta.data()[0];
            let data = tb.data().iter().map(|&y| f(x, y)).collect();
            Tensor::new(tb.shape().to_vec(), data)?
        } else {
            return Err(shape_err("elementwise", ta, tb));
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v * c).collect();
        let out = Tensor::new(src.shape().to_vec(), data).unwrap();
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Addition of a constant.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v + c).collect();
        let out = Tensor::new(src.shape().to_vec(), data).unwrap();
        let rg = self.rg(x);
        self.push(out, Op::AddScalar(x), rg)
    }

    /// Value exactly 1.0 whose gradient flows to `p` with unit weight:
    /// `1 + p - detach(p)`.
    pub fn straight_through_one(&mut self, p: Var) -> Result<Var> {
        let frozen = self.detach(p);
        let zero = self.sub(p, frozen)?;
        Ok(self.add_scalar(zero, 1.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::matrix(m, n, matmul_raw(ta.data(), tb.data(), m, k, n))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let (m, n) = (src.rows(), src.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src.data()[i * n + j];
            }
        }
        let out = Tensor::matrix(n, m, data).unwrap();
        let rg = self.rg(x);
        self.push(out, Op::Transpose(x), rg)
    }

    /// Adds a `1 × n` (or length-`n`) bias to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.len() != n {
            return Err(shape_err("add_row_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRowBias(x, bias), rg))
    }

    /// Multiplies row `r` of `x` by `s[r]`; `s` has one entry per row.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let n = tx.cols();
        if ts.len() != tx.rows() {
            return Err(shape_err("scale_rows", tx, ts));
        }
        let mut data = tx.data().to_vec();
        for (row, &f) in data.chunks_mut(n).zip(ts.data()) {
            for v in row {
                *v *= f;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::ScaleRows(x, s), rg))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax_rows(x, None)
    }

    /// Row-wise softmax where columns with `mask[c] == false` get weight exactly 0.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let src = self.value(x);
        if src.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NaNInput("softmax_rows"));
        }
        let n = src.cols();
        if let Some(m) = mask {
            if m.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "masked_softmax_rows",
                    left: src.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
            if !m.iter().any(|&b| b) {
                return Err(TensorError::EmptyMask);
            }
        }
        let keep = |c: usize| mask.is_none_or(|m| m[c]);
        let mut data = vec![0.0; src.len()];
        for (orow, irow) in data.chunks_mut(n).zip(src.data().chunks(n)) {
            let mx = irow
                .iter()
                .enumerate()
                .filter(|&(c, _)| keep(c))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for c in 0..n {
                if keep(c) {
                    orow[c] = (irow[c] - mx).exp();
                    total += orow[c];
                }
            }
            for v in orow.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Row-wise layer normalization (epsilon 1e-5) followed by `gain ⊙ · + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let n = tx.cols();
        if tg.len() != n || tb.len() != n {
            return Err(shape_err("layernorm", tx, tg));
        }
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = Vec::with_capacity(tx.rows());
        let mut data = vec![0.0; tx.len()];
        for (r, row) in tx.data().chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std.push(inv);
            for c in 0..n {
                let h = (row[c] - mean) * inv;
                xhat[r * n + c] = h;
                data[r * n + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean over the rows with `mask[r] == true` (all rows when `mask` is `None`); result is `1 × n`.
    pub fn mean_pool(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let rows = self.value(x).rows();
        let picked: Vec<usize> = match mask {
            Some(m) => {
                if m.len() != rows {
                    return Err(TensorError::ShapeMismatch {
                        op: "mean_pool",
                        left: self.shape(x).to_vec(),
                        right: vec![m.len()],
                    });
                }
                (0..rows).filter(|&r| m[r]).collect()
            }
            None => (0..rows).collect(),
        };
        if picked.is_empty() {
            return Err(TensorError::EmptyMask);
        }
        let src = self.value(x);
        let n = src.cols();
        let mut data = vec![0.0; n];
        for &r in &picked {
            for (o, &v) in data.iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        let k = picked.len() as f64;
        for v in &mut data {
            *v /= k;
        }
        let out = Tensor::matrix(1, n, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MeanRows(x, picked), rg))
    }

    /// Mean of each contiguous row segment `(start, len)`; one output row per segment.
    pub fn segment_mean(&mut self, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let src = self.value(x);
        let n = src.cols();
        let mut data = Vec::with_capacity(segments.len() * n);
        for &(start, len) in segments {
            if len == 0 || start + len > src.rows() {
                return Err(TensorError::ShapeMismatch {
                    op: "segment_mean",
                    left: src.shape().to_vec(),
                    right: vec![start, len],
                });
            }
            let mut acc = vec![0.0; n];
            for r in start..start + len {
                for (a, &v) in acc.iter_mut().zip(src.row(r)) {
                    *a += v;
                }
            }
            data.extend(acc.into_iter().map(|v| v / len as f64));
        }
        let out = Tensor::matrix(segments.len(), n, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentMean(x, segments.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::EmptyMask);
        };
        let n = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, n, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::EmptyMask);
        };
        let m = self.value(first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(shape_err("concat_cols", self.value(first), self.value(p)));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for r in 0..m {
                data[r * total + off..r * total + off + w].copy_from_slice(t.row(r));
            }
            off += w;
        }
        let out = Tensor::matrix(m, total, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        let (m, n) = (src.rows(), src.cols());
        if start + len > n {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                left: src.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(m, len, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    /// Row gather; also serves as embedding lookup.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let (m, n) = (src.rows(), src.cols());
        let mut data = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            if i >= m {
                return Err(TensorError::ShapeMismatch {
                    op: "gather_rows",
                    left: src.shape().to_vec(),
                    right: vec![i],
                });
            }
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::matrix(ids.len(), n, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows(x, ids.to_vec()), rg))
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// `out[ids[r]] += x[r]` into a zero matrix with `rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, ids: &[usize], rows: usize) -> Result<Var> {
        let src = self.value(x);
        let n = src.cols();
        if ids.len() != src.rows() || ids.iter().any(|&i| i >= rows) {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                left: src.shape().to_vec(),
                right: vec![ids.len(), rows],
            });
        }
        let mut data = vec![0.0; rows * n];
        for (r, &i) in ids.iter().enumerate() {
            for (o, &v) in data[i * n..(i + 1) * n].iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        let out = Tensor::matrix(rows, n, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::ScatterAddRows(x, ids.to_vec()), rg))
    }

    /// Picks flat elements into a column vector (`len × 1`).
    pub fn gather_elems(&mut self, x: Var, flat: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let mut data = Vec::with_capacity(flat.len());
        for &i in flat {
            match src.data().get(i) {
                Some(&v) => data.push(v),
                None => {
                    return Err(TensorError::ShapeMismatch {
                        op: "gather_elems",
                        left: src.shape().to_vec(),
                        right: vec![i],
                    })
                }
            }
        }
        let out = Tensor::matrix(flat.len(), 1, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherElems(x, flat.to_vec()), rg))
    }

    /// `out[v] = Σ_{u ∈ adj[v]} x[u]`.
    pub fn neighbor_sum(&mut self, x: Var, adj: Rc<Vec<Vec<usize>>>) -> Result<Var> {
        let src = self.value(x);
        let n = src.cols();
        if adj.len() != src.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "neighbor_sum",
                left: src.shape().to_vec(),
                right: vec![adj.len()],
            });
        }
        let mut data = vec![0.0; src.len()];
        for (v, nb) in adj.iter().enumerate() {
            let out = &mut data[v * n..(v + 1) * n];
            for &u in nb {
                for (o, &val) in out.iter_mut().zip(src.row(u)) {
                    *o += val;
                }
            }
        }
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Propagate(x, adj), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Elementwise smooth-L1 (Huber with threshold `beta`) against a constant target.
    pub fn smooth_l1(&mut self, pred: Var, target: &[f64], beta: f64) -> Result<Var> {
        let src = self.value(pred);
        if src.len() != target.len() {
            return Err(TensorError::ShapeMismatch {
                op: "smooth_l1",
                left: src.shape().to_vec(),
                right: vec![target.len()],
            });
        }
        let data = src
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let d = (p - t).abs();
                if d < beta {
                    0.5 * d * d / beta
                } else {
                    d - 0.5 * beta
                }
            })
            .collect();
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(pred);
        Ok(self.push(out, Op::SmoothL1(pred, target.to_vec(), beta), rg))
    }

    /// Records an externally computed result with a user-supplied backward.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(output, Op::Custom(inputs.to_vec(), op), rg)
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        if !self.rg(loss) {
            return Err(TensorError::DetachedFromTape);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
            if let Op::Leaf = node.op {
                let slot = self.leaf_grads[id].get_or_insert_with(|| vec![0.0; g.len()]);
                for (s, v) in slot.iter_mut().zip(&g) {
                    *s += v;
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(u, x) => {
                if !rg(*x) {
                    return;
                }
                let xs = val(*x).data();
                let ys = out.data();
                let buf = accumulate(grads, *x, xs.len());
                for i in 0..xs.len() {
                    let d = match u {
                        Unary::Exp => ys[i],
                        Unary::Sigmoid => ys[i] * (1.0 - ys[i]),
                        Unary::Silu => {
                            let s = sigmoid(xs[i]);
                            s * (1.0 + xs[i] * (1.0 - s))
                        }
                        Unary::Softplus => sigmoid(xs[i]),
                    };
                    buf[i] += g[i] * d;
                }
            }
            Op::Binary(op, a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let n = out.len();
                let ai = |i: usize| if ta.len() == 1 && n != 1 { 0 } else { i };
                let bi = |i: usize| if tb.len() == 1 && n != 1 { 0 } else { i };
                if rg(*a) {
                    let buf = accumulate(grads, *a, ta.len());
                    for i in 0..n {
                        let d = match op {
                            Binary::Add | Binary::Sub => 1.0,
                            Binary::Mul => tb.data()[bi(i)],
                            Binary::Div => 1.0 / tb.data()[bi(i)],
                        };
                        buf[ai(i)] += g[i] * d;
                    }
                }
                if rg(*b) {
                    let buf = accumulate(grads, *b, tb.len());
                    for i in 0..n {
                        let d = match op {
                            Binary::Add => 1.0,
                            Binary::Sub => -1.0,
                            Binary::Mul => ta.data()[ai(i)],
                            Binary::Div => {
                                let y = tb.data()[bi(i)];
                                -ta.data()[ai(i)] / (y * y)
                            }
                        };
                        buf[bi(i)] += g[i] * d;
                    }
                }
            }
            Op::Scale(x, c) => {
                if rg(*x) {
                    let buf = accumulate(grads, *x, g.len());
                    for (b, &gv) in buf.iter_mut().zip(g) {
                        *b += gv * c;
                    }
                }
            }
            Op::AddScalar(x) => {
                if rg(*x) {
                    let buf = accumulate(grads, *x, g.len());
                    for (b, &gv) in buf.iter_mut().zip(g) {
                        *b += gv;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if rg(*a) {
                    let buf = accumulate(grads, *a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            buf[i * k + p] += dot;
                        }
                    }
                }
                if rg(*b) {
                    let buf = accumulate(grads, *b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, &gv) in buf[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if rg(*x) {
                    let (m, n) = (val(*x).rows(), val(*x).cols());
                    let buf = accumulate(grads, *x, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            buf[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::AddRowBias(x, b) => {
                let n = out.cols();
                if rg(*x) {
                    let buf = accumulate(grads, *x, g.len());
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                if rg(*b) {
                    let buf = accumulate(grads, *b, n);
                    for row in g.chunks(n) {
                        for (o, &gv) in buf.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::ScaleRows(x, s) => {
                let n = out.cols();
                let (tx, ts) = (val(*x), val(*s));
                if rg(*x) {
                    let buf = accumulate(grads, *x, g.len());
                    for (r, (orow, grow)) in buf.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                        let f = ts.data()[r];
                        for (o, &gv) in orow.iter_mut().zip(grow) {
                            *o += gv * f;
                        }
                    }
                }
                if rg(*s) {
                    let buf = accumulate(grads, *s, ts.len());
                    for (r, grow) in g.chunks(n).enumerate() {
                        buf[r] += grow.iter().zip(tx.row(r)).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                if rg(*x) {
                    let n = out.cols();
                    let buf = accumulate(grads, *x, g.len());
                    for ((orow, yrow), grow) in buf.chunks_mut(n).zip(out.data().chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            orow[c] += yrow[c] * (grow[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = out.cols();
                let tg = val(*gain);
                if rg(*gain) {
                    let buf = accumulate(grads, *gain, n);
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            buf[c] += grow[c] * hrow[c];
                        }
                    }
                }
                if rg(*bias) {
                    let buf = accumulate(grads, *bias, n);
                    for grow in g.chunks(n) {
                        for c in 0..n {
                            buf[c] += grow[c];
                        }
                    }
                }
                if rg(*x) {
                    let buf = accumulate(grads, *x, g.len());
                    let nf = n as f64;
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let gh: Vec<f64> = (0..n).map(|c| grow[c] * tg.data()[c]).collect();
                        let sum_gh: f64 = gh.iter().sum();
                        let sum_ghh: f64 = gh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        for c in 0..n {
                            buf[r * n + c] += inv / nf * (nf * gh[c] - sum_gh - hrow[c] * sum_ghh);
                        }
                    }
                }
            }
            Op::MeanRows(x, picked) => {
                if rg(*x) {
                    let tx = val(*x);
                    let n = tx.cols();
                    let k = picked.len() as f64;
                    let buf = accumulate(grads, *x, tx.len());
                    for &r in picked {
                        for c in 0..n {
                            buf[r * n + c] += g[c] / k;
                        }
                    }
                }
            }
            Op::SegmentMean(x, segs) => {
                if rg(*x) {
                    let tx = val(*x);
                    let n = tx.cols();
                    let buf = accumulate(grads, *x, tx.len());
                    for (s, &(start, len)) in segs.iter().enumerate() {
                        for r in start..start + len {
                            for c in 0..n {
                                buf[r * n + c] += g[s * n + c] / len as f64;
                            }
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    if rg(p) {
                        let buf = accumulate(grads, p, len);
                        for (o, &gv) in buf.iter_mut().zip(&g[off..off + len]) {
                            *o += gv;
                        }
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let m = out.rows();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if rg(p) {
                        let buf = accumulate(grads, p, m * w);
                        for r in 0..m {
                            for c in 0..w {
                                buf[r * w + c] += g[r * total + off + c];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                if rg(*x) {
                    let tx = val(*x);
                    let (m, n) = (tx.rows(), tx.cols());
                    let w = out.cols();
                    let buf = accumulate(grads, *x, m * n);
                    for r in 0..m {
                        for c in 0..w {
                            buf[r * n + start + c] += g[r * w + c];
                        }
                    }
                }
            }
            Op::GatherRows(x, ids) => {
                if rg(*x) {
                    let tx = val(*x);
                    let n = tx.cols();
                    let buf = accumulate(grads, *x, tx.len());
                    for (r, &i) in ids.iter().enumerate() {
                        for c in 0..n {
                            buf[i * n + c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::ScatterAddRows(x, ids) => {
                if rg(*x) {
                    let tx = val(*x);
                    let n = tx.cols();
                    let buf = accumulate(grads, *x, tx.len());
                    for (r, &i) in ids.iter().enumerate() {
                        for c in 0..n {
                            buf[r * n + c] += g[i * n + c];
                        }
                    }
                }
            }
            Op::GatherElems(x, flat) => {
                if rg(*x) {
                    let buf = accumulate(grads, *x, val(*x).len());
                    for (r, &i) in flat.iter().enumerate() {
                        buf[i] += g[r];
                    }
                }
            }
            Op::Propagate(x, adj) => {
                if rg(*x) {
                    let tx = val(*x);
                    let n = tx.cols();
                    let buf = accumulate(grads, *x, tx.len());
                    for (v, nb) in adj.iter().enumerate() {
                        for &u in nb {
                            for c in 0..n {
                                buf[u * n + c] += g[v * n + c];
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if rg(*x) {
                    let len = val(*x).len();
                    let buf = accumulate(grads, *x, len);
                    for o in buf.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::SmoothL1(x, target, beta) => {
                if rg(*x) {
                    let tx = val(*x);
                    let buf = accumulate(grads, *x, tx.len());
                    for i in 0..tx.len() {
                        let d = tx.data()[i] - target[i];
                        let local = if d.abs() < *beta { d / beta } else { d.signum() };
                        buf[i] += g[i] * local;
                    }
                }
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let local = op.backward(&ins, out, g);
                for (&v, lg) in inputs.iter().zip(local) {
                    if rg(v) {
                        let buf = accumulate(grads, v, lg.len());
                        for (o, x) in buf.iter_mut().zip(lg) {
                            *o += x;
                        }
                    }
                }
            }
        }
    }
}
