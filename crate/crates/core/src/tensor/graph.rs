//! The recording tape.

use super::kernels::gemm;
use super::params::{ParamId, ParamStore};
use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        mask: Vec<bool>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<Option<usize>>,
    },
    MaskRows {
        x: Var,
        mask: Vec<bool>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    SmoothL1 {
        pred: Var,
        target: Vec<f64>,
        beta: f64,
    },
    BceLogits {
        logit: Var,
        target: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records a forward computation over the parameters of one store.
pub struct Graph<'p> {
    store: &'p ParamStore,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
    fault: Option<f64>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).expect("internal shape")
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            param_vars: vec![None; store.len()],
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Test hook: scales the left-operand gradient of every matrix product
    /// by `1 + delta`, producing a deliberately wrong backward pass.
    pub fn inject_matmul_fault(&mut self, delta: f64) {
        self.fault = Some(delta);
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is recorded.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (kb, n) = if trans_b {
            (bv.cols(), bv.rows())
        } else {
            (bv.rows(), bv.cols())
        };
        if k != kb {
            return Err(mismatch("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            av.data(),
            false,
            bv.data(),
            trans_b,
            &mut out,
            false,
        );
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(mat(m, n, out), Op::MatMul { a, b, trans_b }, tracked))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(name, av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[1, n]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(mismatch("add_row", xv, rv));
        }
        let n = xv.cols();
        let r = rv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + r[i % n])
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let tracked = self.tracked(x) || self.tracked(row);
        Ok(self.push(t, Op::AddRow { x, row }, tracked))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|&v| f(v)).collect(),
        )
        .unwrap();
        let tracked = self.tracked(x);
        self.push(t, op, tracked)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    /// Row-wise softmax over the columns allowed by `mask`; masked columns
    /// behave as if their score were negative infinity.
    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if mask.len() != c {
            return Err(TensorError::Invalid {
                op: "softmax",
                detail: format!("mask length {} for {} columns", mask.len(), c),
            });
        }
        if c > 0 && !mask.iter().any(|&m| m) {
            return Err(TensorError::AllMasked("softmax"));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xv.row_slice(i);
            let mx = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                if mask[j] {
                    let e = (row[j] - mx).exp();
                    out[i * c + j] = e;
                    z += e;
                }
            }
            for v in &mut out[i * c..(i + 1) * c] {
                *v /= z;
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            mat(r, c, out),
            Op::Softmax {
                x,
                mask: mask.to_vec(),
            },
            tracked,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            mat(rows, total, out),
            Op::ConcatCols(parts.to_vec()),
            tracked,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), v));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            mat(rows, cols, out),
            Op::ConcatRows(parts.to_vec()),
            tracked,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let c = xv.cols();
        if start + len > xv.rows() {
            return Err(TensorError::Invalid {
                op: "slice_rows",
                detail: format!("{start}+{len} exceeds {} rows", xv.rows()),
            });
        }
        let data = xv.data()[start * c..(start + len) * c].to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(mat(len, c, data), Op::SliceRows { x, start }, tracked))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if start + len > c {
            return Err(TensorError::Invalid {
                op: "slice_cols",
                detail: format!("{start}+{len} exceeds {c} cols"),
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row_slice(i)[start..start + len]);
        }
        let tracked = self.tracked(x);
        Ok(self.push(mat(r, len, data), Op::SliceCols { x, start }, tracked))
    }

    /// Column-wise max over consecutive blocks of `seg_len` rows, skipping
    /// rows whose `row_valid` is false. A block without valid rows yields a
    /// zero row. Ties go to the lowest row index.
    pub fn segment_max(
        &mut self,
        x: Var,
        seg_len: usize,
        row_valid: &[bool],
    ) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if seg_len == 0 || r % seg_len != 0 || row_valid.len() != r {
            return Err(TensorError::Invalid {
                op: "segment_max",
                detail: format!("{r} rows, segment {seg_len}, mask {}", row_valid.len()),
            });
        }
        let segs = r / seg_len;
        let mut out = vec![0.0; segs * c];
        let mut argmax = vec![None; segs * c];
        for s in 0..segs {
            for i in s * seg_len..(s + 1) * seg_len {
                if !row_valid[i] {
                    continue;
                }
                let row = xv.row_slice(i);
                for j in 0..c {
                    let slot = s * c + j;
                    if argmax[slot].is_none() || row[j] > out[slot] {
                        out[slot] = row[j];
                        argmax[slot] = Some(i);
                    }
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(mat(segs, c, out), Op::SegmentMax { x, argmax }, tracked))
    }

    /// Zeroes the rows whose mask entry is false.
    pub fn mask_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if mask.len() != r {
            return Err(TensorError::Invalid {
                op: "mask_rows",
                detail: format!("mask {} for {r} rows", mask.len()),
            });
        }
        let mut data = xv.data().to_vec();
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                data[i * c..(i + 1) * c].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            mat(r, c, data),
            Op::MaskRows {
                x,
                mask: mask.to_vec(),
            },
            tracked,
        ))
    }

    /// Per-row normalization followed by a `[1, c]` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.numel() != c || bv.numel() != c {
            return Err(mismatch("layer_norm", xv, gv));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xv.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        Ok(self.push(
            mat(r, c, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            tracked,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over elements of the smooth-L1 (Huber) penalty with transition `beta`.
    pub fn smooth_l1(&mut self, pred: Var, target: &[f64], beta: f64) -> Result<Var, TensorError> {
        let pv = self.value(pred);
        if pv.numel() != target.len() {
            return Err(TensorError::Invalid {
                op: "smooth_l1",
                detail: format!("{} predictions, {} targets", pv.numel(), target.len()),
            });
        }
        let s = pv
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| huber(p - t, beta))
            .sum();
        let tracked = self.tracked(pred);
        Ok(self.push(
            Tensor::scalar(s),
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
                beta,
            },
            tracked,
        ))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against a soft target.
    pub fn bce_with_logits(&mut self, logit: Var, target: f64) -> Result<Var, TensorError> {
        let z = self.value(logit).item()?;
        // log(1 + e^z) - t z, evaluated stably
        let loss = z.max(0.0) + (-z.abs()).exp().ln_1p() - target * z;
        let tracked = self.tracked(logit);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits { logit, target },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar. Gradients of every tracked node are kept.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.tracked {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(pid, v)| v.map(|v| (ParamId(pid), v)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = node.value.cols();
                let fault = self.fault;
                acc(*a, &mut |da| {
                    // dA = dC * op(B)^T
                    let mut tmp = vec![0.0; m * k];
                    gemm(m, n, k, g, false, bv.data(), !*trans_b, &mut tmp, false);
                    let s = fault.map_or(1.0, |d| 1.0 + d);
                    for (x, y) in da.iter_mut().zip(&tmp) {
                        *x += s * y;
                    }
                });
                acc(*b, &mut |db| {
                    if *trans_b {
                        // dB[n,k] = dC^T * A
                        gemm(n, m, k, g, true, av.data(), false, db, true);
                    } else {
                        // dB[k,n] = A^T * dC
                        gemm(k, m, n, av.data(), true, g, false, db, true);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddRow { x, row } => {
                let n = node.value.cols();
                acc(*x, &mut |d| add_into(d, g));
                acc(*row, &mut |d| {
                    for (i, &v) in g.iter().enumerate() {
                        d[i % n] += v;
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |d| {
                d.iter_mut().zip(g).for_each(|(a, b)| *a += s * b)
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        if xv[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Softmax { x, mask } => {
                let y = node.value.data();
                let c = node.value.cols();
                acc(*x, &mut |d| {
                    for (i, (yr, gr)) in y.chunks(c).zip(g.chunks(c)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            if mask[j] {
                                d[i * c + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |d| {
                        for i in 0..rows {
                            let src = &g[i * total + off..i * total + off + w];
                            add_into(&mut d[i * w..(i + 1) * w], src);
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(p, &mut |d| add_into(d, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let c = node.value.cols();
                acc(*x, &mut |d| {
                    add_into(&mut d[start * c..start * c + g.len()], g)
                });
            }
            Op::SliceCols { x, start } => {
                let w = node.value.cols();
                let c = self.value(*x).cols();
                acc(*x, &mut |d| {
                    for (i, gr) in g.chunks(w).enumerate() {
                        add_into(&mut d[i * c + start..i * c + start + w], gr);
                    }
                });
            }
            Op::SegmentMax { x, argmax } => {
                let c = node.value.cols();
                acc(*x, &mut |d| {
                    for (slot, am) in argmax.iter().enumerate() {
                        if let Some(row) = am {
                            d[row * c + slot % c] += g[slot];
                        }
                    }
                });
            }
            Op::MaskRows { x, mask } => {
                let c = node.value.cols();
                acc(*x, &mut |d| {
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            add_into(&mut d[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let gm = self.value(*gamma).data();
                acc(*gamma, &mut |d| {
                    for (i, &v) in g.iter().enumerate() {
                        d[i % c] += v * xhat[i];
                    }
                });
                acc(*beta, &mut |d| {
                    for (i, &v) in g.iter().enumerate() {
                        d[i % c] += v;
                    }
                });
                acc(*x, &mut |d| {
                    let cf = c as f64;
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let dh = gr[j] * gm[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        for j in 0..c {
                            let dh = gr[j] * gm[j];
                            d[r * c + j] += inv / cf * (cf * dh - s1 - hr[j] * s2);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::SmoothL1 { pred, target, beta } => {
                let pv = self.value(*pred).data();
                acc(*pred, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[0] * huber_grad(pv[i] - target[i], *beta);
                    }
                });
            }
            Op::BceLogits { logit, target } => {
                let z = self.value(*logit).data()[0];
                acc(*logit, &mut |d| d[0] += g[0] * (sigmoid(z) - target));
            }
        }
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn huber(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

fn huber_grad(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

/// Gradients of one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// Parameter gradients; parameters the loss does not reach get zeros.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_deref().map(|g| (id, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, v)| self.of(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(vals: &[(&str, Tensor)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, t) in vals {
            s.add(*n, t.clone());
        }
        s
    }

    #[test]
    fn square_gradient() {
        let s = store_with(&[("w", Tensor::scalar(3.0))]);
        let mut g = Graph::new(&s);
        let w = g.param(s.id("w").unwrap());
        let y = g.mul(w, w).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.of(w).unwrap(), &[6.0]);
    }

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        let wt = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
        let s = store_with(&[("w", wt)]);
        let mut g = Graph::new(&s);
        let w = g.param(s.id("w").unwrap());
        let x = g.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.matmul_t(x, w).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.of(w).unwrap(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn segment_max_ties_go_to_first_row() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x =
            g.leaf(Tensor::from_rows(&[vec![1.0, 5.0], vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap());
        let m = g.segment_max(x, 3, &[true, true, true]).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 5.0]);
        let l = g.sum(m);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.of(x).unwrap(), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.leaf(Tensor::row(vec![0.3, 100.0, 0.3]));
        let y = g.softmax_masked(x, &[true, false, true]).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.0, 0.5]);
        assert!(matches!(
            g.softmax_masked(x, &[false, false, false]),
            Err(TensorError::AllMasked(_))
        ));
    }

    #[test]
    fn bce_at_half() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let z = g.leaf(Tensor::scalar(0.0));
        let l = g.bce_with_logits(z, 1.0).unwrap();
        assert!((g.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 5]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }
}
