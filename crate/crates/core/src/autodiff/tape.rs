use std::borrow::Cow;

use rand::Rng;

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Lower clamp applied before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LogSigmoid(Var),
    Log(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<Option<usize>>),
    Sum(Var),
    CrossEntropy(Var, usize),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    grad: Option<Tensor>,
    op: Op,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so every
/// input precedes its consumer and the backward sweep is a reverse scan.
///
/// Leaves may borrow their data (model parameters are shared read-only
/// across concurrently evaluated episodes).
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    macs: u64,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates performed by matrix products recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor, op: Op) -> Var {
        self.push(Cow::Owned(value), op)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_owned(value, Op::Leaf)
    }

    pub fn leaf_ref(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient; all zeros until a backward pass reaches `v`.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn grad_ref(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_vec(src.rows(), src.cols(), data).expect("same shape");
        self.push_owned(out, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: (m, k),
                rhs: (k2, n),
            });
        }
        let mut out = Tensor::zeros(m, n);
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            k,
            n,
        );
        self.macs += (m * k * n) as u64;
        Ok(self.push_owned(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_nt",
                lhs: (m, k),
                rhs: (n, k2),
            });
        }
        let mut out = Tensor::zeros(m, n);
        gemm_nt_acc(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            k,
            n,
        );
        self.macs += (m * k * n) as u64;
        Ok(self.push_owned(out, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push_owned(out, Op::Transpose(a))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data).expect("same shape");
        self.push_owned(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, n), sb) = (self.shape(a), self.shape(b));
        if sb != (1, n) {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: (m, n),
                rhs: sb,
            });
        }
        let mut out = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..m {
            for (o, bv) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        Ok(self.push_owned(out, Op::AddRow(a, b)))
    }

    /// Multiplies every entry of `a` by the `1 × 1` value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::Dimension {
                op: "mul_scalar",
                lhs: self.shape(a),
                rhs: self.shape(s),
            });
        }
        let k = self.value(s).item();
        Ok(self.map(a, |x| x * k, Op::MulScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// `ln σ(x)`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, log_sigmoid, Op::LogSigmoid(a))
    }

    /// `ln(max(x, 1e-12))`.
    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(LOG_CLAMP).ln(), Op::Log(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        if src.cols() == 0 {
            return Err(Error::Shape("softmax of an empty row".into()));
        }
        if src.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let mut out = src.clone();
        let n = out.cols();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        Ok(self.push_owned(out, Op::Softmax(a)))
    }

    /// Row-wise layer normalization followed by an elementwise gain and bias
    /// (both `1 × n`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape(x);
        if n < 2 {
            return Err(Error::Shape(format!(
                "layer_norm needs at least 2 features, got {n}"
            )));
        }
        for p in [gain, bias] {
            if self.shape(p) != (1, n) {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: (m, n),
                    rhs: self.shape(p),
                });
            }
        }
        let src = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = Tensor::zeros(m, n);
        for r in 0..m {
            let row = src.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..n {
                let h = (row[c] - mean) * inv;
                xhat[r * n + c] = h;
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        Ok(self.push_owned(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout. In training mode each entry is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; the mask
    /// is kept for the backward pass. Evaluation mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(src.rows(), src.cols(), data)?;
        Ok(self.push_owned(out, Op::Dropout(x, mask)))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).reshaped(rows, cols)?;
        Ok(self.push_owned(out, Op::Reshape(x)))
    }

    /// Row-major flatten to `1 × (rows·cols)`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.reshape(x, 1, n).expect("flatten preserves size")
    }

    /// Inverse of [`Tape::flatten`].
    pub fn unflatten(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        self.reshape(x, rows, cols)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]),
                    rhs: s,
                });
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                let w = v.cols();
                out.data_mut()[r * cols + off..r * cols + off + w].copy_from_slice(v.row_slice(r));
                off += w;
            }
        }
        Ok(self.push_owned(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]),
                    rhs: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push_owned(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if start + len > m {
            return Err(Error::Shape(format!("rows {start}..{} of {m}", start + len)));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push_owned(Tensor::from_vec(len, n, data)?, Op::SliceRows(x, start)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if start + len > n {
            return Err(Error::Shape(format!("cols {start}..{} of {n}", start + len)));
        }
        let src = self.value(x);
        let mut out = Tensor::zeros(m, len);
        for r in 0..m {
            out.data_mut()[r * len..(r + 1) * len]
                .copy_from_slice(&src.row_slice(r)[start..start + len]);
        }
        Ok(self.push_owned(out, Op::SliceCols(x, start)))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`, or zeros for `None`.
    /// Equivalent to multiplying a one-hot matrix by `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var> {
        let (vocab, width) = self.shape(table);
        let mut out = Tensor::zeros(ids.len(), width);
        for (i, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                if id >= vocab {
                    return Err(Error::Vocabulary { id, vocab });
                }
                out.data_mut()[i * width..(i + 1) * width]
                    .copy_from_slice(self.value(table).row_slice(id));
            }
        }
        Ok(self.push_owned(out, Op::Gather(table, ids.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_owned(Tensor::scalar(s), Op::Sum(x))
    }

    /// `-ln p[target]` for a `1 × O` probability row, with the log clamped
    /// at `1e-12`.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        let (r, o) = self.shape(probs);
        if r != 1 {
            return Err(Error::Shape(format!("cross_entropy expects one row, got {r}")));
        }
        if target >= o {
            return Err(Error::Index {
                index: target,
                len: o,
            });
        }
        let p = self.value(probs).get(0, target);
        Ok(self.push_owned(
            Tensor::scalar(-p.max(LOG_CLAMP).ln()),
            Op::CrossEntropy(probs, target),
        ))
    }

    /// Reverse sweep from the scalar `loss`. Gradients are added to whatever
    /// each node already holds, so a second call without
    /// [`Tape::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                let ga = slot(adj, *a, m, k);
                gemm_nt_acc(g.data(), vb.data(), ga.data_mut(), m, n, k);
                let gb = slot(adj, *b, k, n);
                gemm_tn_acc(va.data(), g.data(), gb.data_mut(), m, k, n);
            }
            Op::MatMulNt(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                let ga = slot(adj, *a, m, k);
                gemm_acc(g.data(), vb.data(), ga.data_mut(), m, n, k);
                let gb = slot(adj, *b, n, k);
                gemm_tn_acc(g.data(), va.data(), gb.data_mut(), m, n, k);
            }
            Op::Transpose(a) => {
                slot(adj, *a, g.cols(), g.rows()).add_assign(&g.transpose());
            }
            Op::Add(a, b) => {
                slot(adj, *a, g.rows(), g.cols()).add_assign(g);
                slot(adj, *b, g.rows(), g.cols()).add_assign(g);
            }
            Op::Sub(a, b) => {
                slot(adj, *a, g.rows(), g.cols()).add_assign(g);
                let gb = slot(adj, *b, g.rows(), g.cols());
                for (x, y) in gb.data_mut().iter_mut().zip(g.data()) {
                    *x -= y;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = slot(adj, *a, g.rows(), g.cols());
                for ((x, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                    *x += gv * bv;
                }
                let gb = slot(adj, *b, g.rows(), g.cols());
                for ((x, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                    *x += gv * av;
                }
            }
            Op::AddRow(a, b) => {
                slot(adj, *a, g.rows(), g.cols()).add_assign(g);
                let n = g.cols();
                let gb = slot(adj, *b, 1, n);
                for r in 0..g.rows() {
                    for (x, gv) in gb.data_mut().iter_mut().zip(g.row_slice(r)) {
                        *x += gv;
                    }
                }
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s).item();
                let va = self.value(*a);
                let dot: f64 = g.data().iter().zip(va.data()).map(|(x, y)| x * y).sum();
                let ga = slot(adj, *a, g.rows(), g.cols());
                for (x, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *x += gv * k;
                }
                slot(adj, *s, 1, 1).data_mut()[0] += dot;
            }
            Op::Scale(a, k) => {
                let ga = slot(adj, *a, g.rows(), g.cols());
                for (x, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *x += gv * k;
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                elementwise(adj, *a, g, |i, gv| if va.data()[i] > 0.0 { gv } else { 0.0 });
            }
            Op::Sigmoid(a) => {
                elementwise(adj, *a, g, |i, gv| {
                    let y = out.data()[i];
                    gv * y * (1.0 - y)
                });
            }
            Op::Tanh(a) => {
                elementwise(adj, *a, g, |i, gv| {
                    let y = out.data()[i];
                    gv * (1.0 - y * y)
                });
            }
            Op::LogSigmoid(a) => {
                let va = self.value(*a);
                elementwise(adj, *a, g, |i, gv| gv * sigmoid(-va.data()[i]));
            }
            Op::Log(a) => {
                let va = self.value(*a);
                elementwise(adj, *a, g, |i, gv| {
                    let x = va.data()[i];
                    if x > LOG_CLAMP {
                        gv / x
                    } else {
                        0.0
                    }
                });
            }
            Op::Softmax(a) => {
                let n = out.cols();
                let ga = slot(adj, *a, out.rows(), n);
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gy = g.row_slice(r);
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for c in 0..n {
                        ga.data_mut()[r * n + c] += y[c] * (gy[c] - dot);
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
                let (m, n) = out.shape();
                let gv = self.value(*gain).data().to_vec();
                {
                    let gg = slot(adj, *gain, 1, n);
                    for r in 0..m {
                        for c in 0..n {
                            gg.data_mut()[c] += g.get(r, c) * xhat[r * n + c];
                        }
                    }
                }
                {
                    let gb = slot(adj, *bias, 1, n);
                    for r in 0..m {
                        for c in 0..n {
                            gb.data_mut()[c] += g.get(r, c);
                        }
                    }
                }
                let gx = slot(adj, *x, m, n);
                let nf = n as f64;
                for r in 0..m {
                    let dxhat: Vec<f64> = (0..n).map(|c| g.get(r, c) * gv[c]).collect();
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = (0..n).map(|c| dxhat[c] * xhat[r * n + c]).sum();
                    for c in 0..n {
                        gx.data_mut()[r * n + c] += inv_std[r] / nf
                            * (nf * dxhat[c] - sum_d - xhat[r * n + c] * sum_dx);
                    }
                }
            }
            Op::Dropout(a, mask) => {
                elementwise(adj, *a, g, |i, gv| gv * mask[i]);
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                let ga = slot(adj, *a, r, c);
                for (x, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *x += gv;
                }
            }
            Op::ConcatCols(parts) => {
                let cols = g.cols();
                let mut off = 0;
                for &p in parts {
                    let (r, w) = self.shape(p);
                    let gp = slot(adj, p, r, w);
                    for row in 0..r {
                        for c in 0..w {
                            gp.data_mut()[row * w + c] += g.data()[row * cols + off + c];
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, w) = self.shape(p);
                    let gp = slot(adj, p, r, w);
                    for (x, gv) in gp.data_mut().iter_mut().zip(&g.data()[off..off + r * w]) {
                        *x += gv;
                    }
                    off += r * w;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, n) = self.shape(*a);
                let ga = slot(adj, *a, r, n);
                for (x, gv) in ga.data_mut()[start * n..].iter_mut().zip(g.data()) {
                    *x += gv;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, n) = self.shape(*a);
                let w = g.cols();
                let ga = slot(adj, *a, r, n);
                for row in 0..r {
                    for c in 0..w {
                        ga.data_mut()[row * n + start + c] += g.get(row, c);
                    }
                }
            }
            Op::Gather(table, ids) => {
                let (v, w) = self.shape(*table);
                let gt = slot(adj, *table, v, w);
                for (i, id) in ids.iter().enumerate() {
                    if let Some(id) = *id {
                        for c in 0..w {
                            gt.data_mut()[id * w + c] += g.get(i, c);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let k = g.item();
                let (r, c) = self.shape(*a);
                let ga = slot(adj, *a, r, c);
                ga.data_mut().iter_mut().for_each(|x| *x += k);
            }
            Op::CrossEntropy(p, target) => {
                let (r, c) = self.shape(*p);
                let pt = self.value(*p).get(0, *target);
                let gp = slot(adj, *p, r, c);
                if pt > LOG_CLAMP {
                    gp.data_mut()[*target] -= g.item() / pt;
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut Tensor {
    adj[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

fn elementwise(adj: &mut [Option<Tensor>], a: Var, g: &Tensor, f: impl Fn(usize, f64) -> f64) {
    let ga = slot(adj, a, g.rows(), g.cols());
    for (i, (x, gv)) in ga.data_mut().iter_mut().zip(g.data()).enumerate() {
        *x += f(i, *gv);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
