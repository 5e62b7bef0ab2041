//! Reverse-mode autodiff on a flat operation tape.
//!
//! A [`Tape`] owns every intermediate [`Tensor`] of one forward pass as a
//! node in a flat arena. Operations push a node and hand back a [`Var`]
//! (an index into the arena), so wiring a graph costs nothing beyond the
//! forward arithmetic itself. [`Tape::backward`] walks the arena once in
//! reverse, accumulating gradients into exactly the nodes that need them.
//!
//! Two invariants hold everywhere:
//!
//! * every operation checks its output for NaN/Inf and fails loudly instead
//!   of letting poison propagate, and
//! * a tape can be differentiated once; a second `backward` is an error
//!   because the stored gradients would silently mix two seeds.

use super::{Tensor, TensorError};

/// Epsilon added to the variance inside layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
///
/// A `Var` is only meaningful for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    AddRow { a: usize, row: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    Matmul { a: usize, b: usize },
    MatmulTransB { a: usize, b: usize },
    SoftmaxRows { x: usize },
    LayerNormRows { x: usize, gain: usize, bias: usize, xhat: Tensor, inv_std: Vec<f64> },
    Relu { x: usize },
    Sum { x: usize },
    SelectRow { x: usize, row: usize },
    SliceCols { x: usize, start: usize, len: usize },
    ConcatCols { parts: Vec<usize> },
    EmbedRows { table: usize, ids: Vec<usize> },
    Huber { pred: usize, target: f64, delta: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Arena of one forward pass plus the machinery to differentiate it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    /// An empty tape.
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a constant input; gradients do not flow into it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, false, Op::Leaf)
    }

    /// Records a trainable input; `grad` is available after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, true, Op::Leaf)
    }

    /// The forward value of `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// The accumulated gradient of the `backward` root with respect to `v`.
    ///
    /// `None` before `backward`, for constants, and for nodes the root does
    /// not depend on.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }

    /// Like [`Tape::grad`] but substitutes zeros when no gradient reached `v`.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape.clone()))
    }

    fn push_unchecked(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, opname: &'static str, value: Tensor, requires_grad: bool, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: opname });
        }
        Ok(self.push_unchecked(value, requires_grad, op))
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.val(a).add(self.val(b))?;
        self.push("add", out, self.needs_grad(&[a, b]), Op::Add { a: a.0, b: b.0 })
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (av, rv) = (self.val(a), self.val(row));
        if av.shape().len() != 2 || rv.shape().len() != 1 || av.cols() != rv.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                details: format!("{:?} + row {:?}", av.shape(), rv.shape()),
            });
        }
        let (m, n) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(vec![m, n]);
        for r in 0..m {
            for c in 0..n {
                out.data[r * n + c] = av.data[r * n + c] + rv.data[c];
            }
        }
        self.push("add_row", out, self.needs_grad(&[a, row]), Op::AddRow { a: a.0, row: row.0 })
    }

    /// Elementwise product; shapes must match.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                details: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let out = Tensor { shape: av.shape.clone(), data };
        self.push("mul", out, self.needs_grad(&[a, b]), Op::Mul { a: a.0, b: b.0 })
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let out = self.val(a).scale(factor);
        self.push("scale", out, self.needs_grad(&[a]), Op::Scale { a: a.0, factor })
    }

    /// Matrix product `a (m x k) . b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.val(a).matmul(self.val(b))?;
        self.push("matmul", out, self.needs_grad(&[a, b]), Op::Matmul { a: a.0, b: b.0 })
    }

    /// Matrix product against a transposed right factor: `a (m x k) . b^T (k x n)`.
    ///
    /// Attention scores `Q . K^T` use this without materialising the transpose.
    pub fn matmul_transpose_b(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_transpose_b",
                details: format!("{:?} x {:?}^T", av.shape(), bv.shape()),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = Tensor::zeros(vec![m, n]);
        for r in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += av.data[r * k + l] * bv.data[j * k + l];
                }
                out.data[r * n + j] = acc;
            }
        }
        self.push(
            "matmul_transpose_b",
            out,
            self.needs_grad(&[a, b]),
            Op::MatmulTransB { a: a.0, b: b.0 },
        )
    }

    /// Row-wise softmax of a rank-2 tensor.
    ///
    /// Rows are shifted by their maximum before exponentiation, so additive
    /// masks of `-1e9` underflow to exactly zero probability.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.val(x);
        xv.check2("softmax_rows")?;
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(vec![m, n]);
        for r in 0..m {
            let row = &xv.data[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out.data[r * n..(r + 1) * n];
            let mut sum = 0.0;
            for c in 0..n {
                let e = (row[c] - max).exp();
                orow[c] = e;
                sum += e;
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        self.push("softmax_rows", out, self.needs_grad(&[x]), Op::SoftmaxRows { x: x.0 })
    }

    /// Layer normalisation of every row, with per-column gain and bias.
    ///
    /// Uses population variance and [`LAYER_NORM_EPS`].
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (xv, gv, bv) = (self.val(x), self.val(gain), self.val(bias));
        let ok = xv.shape().len() == 2
            && gv.shape().len() == 1
            && bv.shape().len() == 1
            && gv.numel() == xv.cols()
            && bv.numel() == xv.cols();
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm_rows",
                details: format!("x {:?}, gain {:?}, bias {:?}", xv.shape(), gv.shape(), bv.shape()),
            });
        }
        let (m, n) = (xv.rows(), xv.cols());
        let mut xhat = Tensor::zeros(vec![m, n]);
        let mut inv_std = vec![0.0; m];
        let mut out = Tensor::zeros(vec![m, n]);
        for (r, inv) in inv_std.iter_mut().enumerate() {
            let row = &xv.data[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            *inv = is;
            for (c, &x) in row.iter().enumerate() {
                let xh = (x - mean) * is;
                xhat.data[r * n + c] = xh;
                out.data[r * n + c] = gv.data[c] * xh + bv.data[c];
            }
        }
        self.push(
            "layer_norm_rows",
            out,
            self.needs_grad(&[x, gain, bias]),
            Op::LayerNormRows { x: x.0, gain: gain.0, bias: bias.0, xhat, inv_std },
        )
    }

    /// Elementwise `max(x, 0)`. The subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.val(x).clamp_min(0.0);
        self.push("relu", out, self.needs_grad(&[x]), Op::Relu { x: x.0 })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let total = self.val(x).data.iter().sum();
        self.push("sum", Tensor::scalar(total), self.needs_grad(&[x]), Op::Sum { x: x.0 })
    }

    /// Extracts row `row` of a rank-2 tensor as a `1 x n` matrix.
    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var, TensorError> {
        let xv = self.val(x);
        xv.check2("select_row")?;
        if row >= xv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "select_row",
                details: format!("row {} of {:?}", row, xv.shape()),
            });
        }
        let n = xv.cols();
        let data = xv.data[row * n..(row + 1) * n].to_vec();
        let out = Tensor { shape: vec![1, n], data };
        self.push("select_row", out, self.needs_grad(&[x]), Op::SelectRow { x: x.0, row })
    }

    /// Extracts columns `start .. start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = self.val(x);
        xv.check2("slice_cols")?;
        if start + len > xv.cols() || len == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                details: format!("cols {}..{} of {:?}", start, start + len, xv.shape()),
            });
        }
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(vec![m, len]);
        for r in 0..m {
            out.data[r * len..(r + 1) * len]
                .copy_from_slice(&xv.data[r * n + start..r * n + start + len]);
        }
        self.push("slice_cols", out, self.needs_grad(&[x]), Op::SliceCols { x: x.0, start, len })
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                details: "no parts".into(),
            });
        }
        let m = self.val(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.val(p);
            pv.check2("concat_cols")?;
            if pv.rows() != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    details: format!("row counts differ: {} vs {}", m, pv.rows()),
                });
            }
            total += pv.cols();
        }
        let mut out = Tensor::zeros(vec![m, total]);
        let mut offset = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            let n = pv.cols();
            for r in 0..m {
                out.data[r * total + offset..r * total + offset + n]
                    .copy_from_slice(&pv.data[r * n..(r + 1) * n]);
            }
            offset += n;
        }
        let requires = self.needs_grad(parts);
        self.push(
            "concat_cols",
            out,
            requires,
            Op::ConcatCols { parts: parts.iter().map(|v| v.0).collect() },
        )
    }

    /// Gathers rows of `table` by id: output row `i` is `table[ids[i]]`.
    ///
    /// Gradients accumulate back into the table, so repeated ids add up.
    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let tv = self.val(table);
        tv.check2("embed_rows")?;
        if ids.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "embed_rows",
                details: "empty id list".into(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= tv.rows()) {
            return Err(TensorError::ShapeMismatch {
                op: "embed_rows",
                details: format!("id {} out of range for table with {} rows", bad, tv.rows()),
            });
        }
        let n = tv.cols();
        let mut out = Tensor::zeros(vec![ids.len(), n]);
        for (i, &id) in ids.iter().enumerate() {
            out.data[i * n..(i + 1) * n].copy_from_slice(&tv.data[id * n..(id + 1) * n]);
        }
        self.push(
            "embed_rows",
            out,
            self.needs_grad(&[table]),
            Op::EmbedRows { table: table.0, ids: ids.to_vec() },
        )
    }

    /// Huber loss of a scalar prediction against a constant target.
    ///
    /// `0.5 (p - t)^2` for `|p - t| <= delta`, else `delta (|p - t| - 0.5 delta)`.
    pub fn huber(&mut self, pred: Var, target: f64, delta: f64) -> Result<Var, TensorError> {
        let pv = self.val(pred);
        if pv.numel() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "huber",
                details: format!("prediction must be scalar, got {:?}", pv.shape()),
            });
        }
        if delta.is_nan() || delta <= 0.0 {
            return Err(TensorError::ShapeMismatch {
                op: "huber",
                details: format!("delta must be positive, got {}", delta),
            });
        }
        let r = pv.data[0] - target;
        let loss = if r.abs() <= delta { 0.5 * r * r } else { delta * (r.abs() - 0.5 * delta) };
        self.push(
            "huber",
            Tensor::scalar(loss),
            self.needs_grad(&[pred]),
            Op::Huber { pred: pred.0, target, delta },
        )
    }

    /// Runs reverse accumulation from the scalar `out`.
    ///
    /// Consumes the tape's differentiability: a second call returns
    /// [`TensorError::StaleTape`]. Gradients are then readable via
    /// [`Tape::grad`].
    pub fn backward(&mut self, out: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::StaleTape);
        }
        self.consumed = true;
        let root = &self.nodes[out.0];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarOutput(root.value.shape.clone()));
        }
        if !root.requires_grad {
            // Nothing trainable feeds the root; all gradients are trivially absent.
            return Ok(());
        }
        self.nodes[out.0].grad = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let contribs = self.contributions(i);
            for (idx, c) in contribs {
                debug_assert!(idx < i, "tape nodes must be topologically ordered");
                let node = &mut self.nodes[idx];
                if !node.requires_grad {
                    continue;
                }
                let numel = node.value.numel();
                let buf = node.grad.get_or_insert_with(|| vec![0.0; numel]);
                for (b, v) in buf.iter_mut().zip(&c) {
                    *b += v;
                }
            }
        }
        for node in &self.nodes {
            if let Some(g) = &node.grad {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to each of its parents.
    fn contributions(&self, i: usize) -> Vec<(usize, Vec<f64>)> {
        let node = &self.nodes[i];
        let g = node.grad.as_ref().expect("caller checked grad presence");
        let y = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow { a, row } => {
                let (m, n) = (y.rows(), y.cols());
                let mut drow = vec![0.0; n];
                for r in 0..m {
                    for c in 0..n {
                        drow[c] += g[r * n + c];
                    }
                }
                vec![(*a, g.clone()), (*row, drow)]
            }
            Op::Mul { a, b } => {
                let av = &self.nodes[*a].value.data;
                let bv = &self.nodes[*b].value.data;
                let da = g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect();
                let db = g.iter().zip(av).map(|(gi, ai)| gi * ai).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale { a, factor } => {
                vec![(*a, g.iter().map(|gi| gi * factor).collect())]
            }
            Op::Matmul { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                // dA = g . B^T
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for l in 0..k {
                        let mut acc = 0.0;
                        for c in 0..n {
                            acc += g[r * n + c] * bv.data[l * n + c];
                        }
                        da[r * k + l] = acc;
                    }
                }
                // dB = A^T . g
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    for l in 0..k {
                        let av_rl = av.data[r * k + l];
                        if av_rl == 0.0 {
                            continue;
                        }
                        for c in 0..n {
                            db[l * n + c] += av_rl * g[r * n + c];
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::MatmulTransB { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                // y = A . B^T, so dA = g . B and dB = g^T . A.
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for l in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[r * n + j] * bv.data[j * k + l];
                        }
                        da[r * k + l] = acc;
                    }
                }
                let mut db = vec![0.0; n * k];
                for j in 0..n {
                    for l in 0..k {
                        let mut acc = 0.0;
                        for r in 0..m {
                            acc += g[r * n + j] * av.data[r * k + l];
                        }
                        db[j * k + l] = acc;
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::SoftmaxRows { x } => {
                let (m, n) = (y.rows(), y.cols());
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let yrow = &y.data[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let dot: f64 = yrow.iter().zip(grow).map(|(yi, gi)| yi * gi).sum();
                    for c in 0..n {
                        dx[r * n + c] = yrow[c] * (grow[c] - dot);
                    }
                }
                vec![(*x, dx)]
            }
            Op::LayerNormRows { x, gain, bias, xhat, inv_std } => {
                let (m, n) = (y.rows(), y.cols());
                let gv = &self.nodes[*gain].value.data;
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    let xhrow = &xhat.data[r * n..(r + 1) * n];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for c in 0..n {
                        dgain[c] += grow[c] * xhrow[c];
                        dbias[c] += grow[c];
                        let dxh = grow[c] * gv[c];
                        m1 += dxh;
                        m2 += dxh * xhrow[c];
                    }
                    m1 /= n as f64;
                    m2 /= n as f64;
                    for c in 0..n {
                        let dxh = grow[c] * gv[c];
                        dx[r * n + c] = inv_std[r] * (dxh - m1 - xhrow[c] * m2);
                    }
                }
                vec![(*x, dx), (*gain, dgain), (*bias, dbias)]
            }
            Op::Relu { x } => {
                let xv = &self.nodes[*x].value.data;
                let dx = g.iter().zip(xv).map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 }).collect();
                vec![(*x, dx)]
            }
            Op::Sum { x } => {
                let numel = self.nodes[*x].value.numel();
                vec![(*x, vec![g[0]; numel])]
            }
            Op::SelectRow { x, row } => {
                let xv = &self.nodes[*x].value;
                let n = xv.cols();
                let mut dx = vec![0.0; xv.numel()];
                dx[row * n..(row + 1) * n].copy_from_slice(g);
                vec![(*x, dx)]
            }
            Op::SliceCols { x, start, len } => {
                let xv = &self.nodes[*x].value;
                let (m, n) = (xv.rows(), xv.cols());
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..*len {
                        dx[r * n + start + c] = g[r * len + c];
                    }
                }
                vec![(*x, dx)]
            }
            Op::ConcatCols { parts } => {
                let total = y.cols();
                let m = y.rows();
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.cols();
                    let mut dp = vec![0.0; m * n];
                    for r in 0..m {
                        dp[r * n..(r + 1) * n]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + n]);
                    }
                    out.push((p, dp));
                    offset += n;
                }
                out
            }
            Op::EmbedRows { table, ids } => {
                let tv = &self.nodes[*table].value;
                let n = tv.cols();
                let mut dt = vec![0.0; tv.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    for c in 0..n {
                        dt[id * n + c] += g[i * n + c];
                    }
                }
                vec![(*table, dt)]
            }
            Op::Huber { pred, target, delta } => {
                let p = self.nodes[*pred].value.data[0];
                let r = p - target;
                let d = if r.abs() <= *delta { r } else { delta * r.signum() };
                vec![(*pred, vec![g[0] * d])]
            }
        }
    }
}
