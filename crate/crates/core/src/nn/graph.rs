//! Tape-based reverse-mode differentiation over the small op set the models need.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably; parameters enter the tape by id
//! without copying. Every op checks its output for non-finite values and records
//! the first offending op; [`Graph::backward`] then refuses to run.

use std::collections::HashMap;

use super::gemm::{gemm, Layout};
use super::{Grads, NnError, ParamId, ParamStore, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, row: Var },
    MulRow { x: Var, row: Var },
    Scale(Var, f32),
    AddConst(Var),
    Square(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, rstd: Vec<f32> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f32> },
    SelectRows { x: Var, idx: Vec<usize> },
    Interleave { x: Var, token: Option<Var>, src: Vec<Option<usize>> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    MeanRows(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    MaskedMse { pred: Var, target: Vec<f32>, rows: Vec<usize> },
    Pick { x: Var, index: usize },
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    scalar64: Option<f64>,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    fault: Option<String>,
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

/// Rational minimax tanh for f32 (a few ulp), branch-free so GELU loops
/// vectorize. libm's `tanhf` dominated encoder time.
#[inline]
pub(crate) fn fast_tanh(x: f32) -> f32 {
    const CLAMP: f32 = 7.905_311;
    const A: [f32; 7] = [
        4.893_524_6e-3,
        6.372_619_3e-4,
        1.485_722_4e-5,
        5.122_297e-8,
        -8.604_672e-11,
        2.000_188e-13,
        -2.760_768_5e-16,
    ];
    const B: [f32; 4] = [4.893_525e-3, 2.268_434_6e-3, 1.185_347e-4, 1.198_258_4e-6];
    let x = x.clamp(-CLAMP, CLAMP);
    let x2 = x * x;
    let mut p = A[6];
    for a in A[..6].iter().rev() {
        p = p * x2 + a;
    }
    let q = ((B[3] * x2 + B[2]) * x2 + B[1]) * x2 + B[0];
    x * p / q
}

fn gelu(x: f32) -> (f32, f32) {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    const A: f32 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = fast_tanh(u);
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stabilized in-place softmax over one row.
pub(crate) fn softmax_row(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v as f64;
    }
    let inv = (1.0 / sum) as f32;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            fault: None,
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First op that produced a non-finite value, if any.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(id), None) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a reduction node, accumulated in double precision.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0]
            .scalar64
            .unwrap_or_else(|| self.value(v).item() as f64)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &str) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(name.to_string());
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
            scalar64: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_scalar(&mut self, op: Op, value: f64, name: &str) -> Var {
        let v = self.push(op, Tensor::full(&[1], value as f32), name);
        self.nodes[v.0].scalar64 = Some(value);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t, "input")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            scalar64: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Copies a value onto the tape as a constant (gradient stops here).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a)·op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (ar, ac) = shape2(self.value(a));
        let (br, bc) = shape2(self.value(b));
        let mut la = Layout::row_major(ar, ac);
        let mut lb = Layout::row_major(br, bc);
        if ta {
            la = la.t();
        }
        if tb {
            lb = lb.t();
        }
        assert_eq!(la.cols, lb.rows, "matmul inner dims");
        let mut out = vec![0.0; la.rows * lb.cols];
        gemm(
            1.0,
            self.value(a).data(),
            la,
            self.value(b).data(),
            lb,
            0.0,
            &mut out,
            Layout::row_major(la.rows, lb.cols),
        );
        let t = Tensor::from_vec(&[la.rows, lb.cols], out).unwrap();
        self.push(Op::MatMul { a, b, ta, tb }, t, "matmul")
    }

    /// `x·w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (m, k) = shape2(self.value(x));
        let (wk, n) = shape2(self.value(w));
        assert_eq!(k, wk, "linear input width {k} vs weight rows {wk}");
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), n, "bias width");
            for r in 0..m {
                out[r * n..(r + 1) * n].copy_from_slice(bias);
            }
        }
        gemm(
            1.0,
            self.value(x).data(),
            Layout::row_major(m, k),
            self.value(w).data(),
            Layout::row_major(k, n),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
            Layout::row_major(m, n),
        );
        let t = Tensor::from_vec(&[m, n], out).unwrap();
        self.push(Op::Linear { x, w, b }, t, "linear")
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let ta = self.value(a);
        let tb = self.value(b);
        assert_eq!(ta.len(), tb.len(), "elementwise length mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.shape(), data).unwrap()
    }

    fn map(&self, a: Var, f: impl Fn(f32) -> f32) -> Tensor {
        let ta = self.value(a);
        Tensor::from_vec(ta.shape(), ta.data().iter().map(|x| f(*x)).collect()).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_map(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), t, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_map(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), t, "mul")
    }

    /// Adds a `[cols]` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let t = self.broadcast_row(x, row, |a, b| a + b);
        self.push(Op::AddRow { x, row }, t, "add_row")
    }

    /// Multiplies every row of `x` elementwise by a `[cols]` row vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let t = self.broadcast_row(x, row, |a, b| a * b);
        self.push(Op::MulRow { x, row }, t, "mul_row")
    }

    fn broadcast_row(&self, x: Var, row: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let tx = self.value(x);
        let tr = self.value(row).data();
        let c = tx.cols();
        assert_eq!(tr.len(), c, "broadcast row width");
        let data = tx
            .data()
            .chunks(c)
            .flat_map(|r| r.iter().zip(tr).map(|(a, b)| f(*a, *b)))
            .collect();
        Tensor::from_vec(tx.shape(), data).unwrap()
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let t = self.map(a, |x| x * s);
        self.push(Op::Scale(a, s), t, "scale")
    }

    pub fn add_const(&mut self, a: Var, c: f32) -> Var {
        let t = self.map(a, |x| x + c);
        self.push(Op::AddConst(a), t, "add_const")
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x * x);
        self.push(Op::Square(a), t, "square")
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| gelu(x).0);
        self.push(Op::Gelu(a), t, "gelu")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f32::tanh);
        self.push(Op::Tanh(a), t, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), t, "sigmoid")
    }

    /// Per-row layer normalization with affine `gamma`, `beta` (eps 1e-5).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let tx = self.value(x);
        let (m, n) = shape2(tx);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        assert_eq!(g.len(), n, "layer norm gamma width");
        let mut xhat = vec![0.0f32; m * n];
        let mut rstd = vec![0.0f32; m];
        let mut out = vec![0.0f32; m * n];
        for r in 0..m {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().map(|v| *v as f64).sum::<f64>() / n as f64;
            let var = row
                .iter()
                .map(|v| (*v as f64 - mean) * (*v as f64 - mean))
                .sum::<f64>()
                / n as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[r] = rs as f32;
            for c in 0..n {
                let h = ((row[c] as f64 - mean) * rs) as f32;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::from_vec(&[m, n], out).unwrap();
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            t,
            "layer_norm",
        )
    }

    /// Multi-head scaled dot-product attention core. `q: [nq, d]`, `k, v: [nk, d]`;
    /// head `h` uses columns `h*d/heads..(h+1)*d/heads`. Output `[nq, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (nq, d) = shape2(self.value(q));
        let (nk, dk_all) = shape2(self.value(k));
        assert_eq!(d, dk_all, "attention width");
        assert_eq!(shape2(self.value(v)), (nk, d), "attention value shape");
        assert!(heads > 0 && d % heads == 0, "heads must divide width");
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut probs = vec![0.0f32; heads * nq * nk];
        let mut out = vec![0.0f32; nq * d];
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        for h in 0..heads {
            let p = &mut probs[h * nq * nk..(h + 1) * nq * nk];
            gemm(
                scale,
                &qd[h * dh..],
                Layout::strided(nq, dh, d),
                &kd[h * dh..],
                Layout::strided(nk, dh, d).t(),
                0.0,
                p,
                Layout::row_major(nq, nk),
            );
            for row in p.chunks_mut(nk) {
                softmax_row(row);
            }
            gemm(
                1.0,
                p,
                Layout::row_major(nq, nk),
                &vd[h * dh..],
                Layout::strided(nk, dh, d),
                0.0,
                &mut out[h * dh..],
                Layout::strided(nq, dh, d),
            );
        }
        let t = Tensor::from_vec(&[nq, d], out).unwrap();
        self.push(
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            t,
            "attention",
        )
    }

    /// Attention probabilities `[heads, nq, nk]` stored by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<(&[f32], usize, usize, usize)> {
        match &self.nodes[v.0].op {
            Op::Attention { q, k, heads, probs, .. } => {
                let nq = self.value(*q).rows();
                let nk = self.value(*k).rows();
                Some((probs.as_slice(), *heads, nq, nk))
            }
            _ => None,
        }
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let tx = self.value(x);
        let (m, n) = shape2(tx);
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < m, "row index {i} out of range {m}");
            data.extend_from_slice(tx.row(i));
        }
        let t = Tensor::from_vec(&[idx.len(), n], data).unwrap();
        self.push(
            Op::SelectRows {
                x,
                idx: idx.to_vec(),
            },
            t,
            "select_rows",
        )
    }

    /// Builds `[src.len(), cols]` where row `i` is `x[src[i]]` or, when `src[i]` is
    /// `None`, the broadcast `token` (zeros if no token).
    pub fn interleave(&mut self, x: Var, token: Option<Var>, src: &[Option<usize>]) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let tok: Vec<f32> = match token {
            Some(t) => {
                let td = self.value(t).data();
                assert_eq!(td.len(), n, "interleave token width");
                td.to_vec()
            }
            None => vec![0.0; n],
        };
        let mut data = Vec::with_capacity(src.len() * n);
        for s in src {
            match s {
                Some(i) => data.extend_from_slice(tx.row(*i)),
                None => data.extend_from_slice(&tok),
            }
        }
        let t = Tensor::from_vec(&[src.len(), n], data).unwrap();
        self.push(
            Op::Interleave {
                x,
                token,
                src: src.to_vec(),
            },
            t,
            "interleave",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let tp = self.value(*p);
            assert_eq!(tp.rows(), m, "concat row mismatch");
            for r in 0..m {
                data[r * total + off..r * total + off + w].copy_from_slice(tp.row(r));
            }
            off += w;
        }
        let t = Tensor::from_vec(&[m, total], data).unwrap();
        self.push(Op::ConcatCols(parts.to_vec()), t, "concat_cols")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = self.value(x);
        let (m, n) = shape2(tx);
        assert!(start + len <= n, "slice out of range");
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let t = Tensor::from_vec(&[m, len], data).unwrap();
        self.push(Op::SliceCols { x, start }, t, "slice_cols")
    }

    /// Column means: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (m, n) = shape2(tx);
        let mut acc = vec![0.0f64; n];
        for r in 0..m {
            for (a, v) in acc.iter_mut().zip(tx.row(r)) {
                *a += *v as f64;
            }
        }
        let data = acc.iter().map(|a| (*a / m as f64) as f32).collect();
        let t = Tensor::from_vec(&[1, n], data).unwrap();
        self.push(Op::MeanRows(x), t, "mean_rows")
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let n = t.cols();
        for row in t.data_mut().chunks_mut(n) {
            softmax_row(row);
        }
        self.push(Op::Softmax(x), t, "softmax")
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let n = t.cols();
        for row in t.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = row.iter().map(|v| ((*v - max) as f64).exp()).sum::<f64>().ln() as f32 + max;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(Op::LogSoftmax(x), t, "log_softmax")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| *v as f64).sum();
        self.push_scalar(Op::Sum(x), s, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().map(|v| *v as f64).sum::<f64>() / t.len() as f64;
        self.push_scalar(Op::Mean(x), s, "mean")
    }

    /// Per-element mean squared error over the selected rows of `pred` against the
    /// matching rows of `target` (`target` has the same shape as `pred`).
    pub fn masked_mse(&mut self, pred: Var, target: &Tensor, rows: &[usize]) -> Var {
        let tp = self.value(pred);
        assert_eq!(tp.shape(), target.shape(), "mse target shape");
        assert!(!rows.is_empty(), "masked mse needs at least one row");
        let n = tp.cols();
        let mut sel = Vec::with_capacity(rows.len() * n);
        let mut acc = 0.0f64;
        for &r in rows {
            let tr = target.row(r);
            for (p, t) in tp.row(r).iter().zip(tr) {
                let d = (*p - *t) as f64;
                acc += d * d;
            }
            sel.extend_from_slice(tr);
        }
        let loss = acc / (rows.len() * n) as f64;
        self.push_scalar(
            Op::MaskedMse {
                pred,
                target: sel,
                rows: rows.to_vec(),
            },
            loss,
            "masked_mse",
        )
    }

    /// Single element of `x` (flat index) as a scalar node.
    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let v = self.value(x).data()[index];
        self.push_scalar(Op::Pick { x, index }, v as f64, "pick")
    }

    /// Reverse pass from a scalar `loss`, accumulating parameter gradients into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Grads) -> Result<(), NnError> {
        self.backward_scaled(loss, 1.0, grads)
    }

    pub fn backward_scaled(&self, loss: Var, seed: f32, grads: &mut Grads) -> Result<(), NnError> {
        if let Some(op) = &self.fault {
            return Err(NnError::Numeric(format!("non-finite value produced by {op}")));
        }
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut g: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            self.backprop_node(i, &dy, &mut g, grads);
        }
        Ok(())
    }

    fn buf<'g>(&self, g: &'g mut [Option<Vec<f32>>], v: Var) -> &'g mut Vec<f32> {
        let len = self.value(v).len();
        g[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn acc(&self, g: &mut [Option<Vec<f32>>], v: Var, d: &[f32]) {
        let b = self.buf(g, v);
        for (a, x) in b.iter_mut().zip(d) {
            *a += *x;
        }
    }

    fn backprop_node(&self, i: usize, dy: &[f32], g: &mut [Option<Vec<f32>>], grads: &mut Grads) {
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param(id) => {
                grads.accumulate(*id, self.store.get(*id).shape(), dy);
            }
            Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = shape2(self.value(*a));
                let (br, bc) = shape2(self.value(*b));
                let mut la = Layout::row_major(ar, ac);
                let mut lb = Layout::row_major(br, bc);
                if *ta {
                    la = la.t();
                }
                if *tb {
                    lb = lb.t();
                }
                let ld = Layout::row_major(la.rows, lb.cols);
                // d op(a) = dy · op(b)^T, written through op's layout into a's buffer.
                let mut out_a = Layout::row_major(ar, ac);
                if *ta {
                    out_a = out_a.t();
                }
                let bv = self.value(*b).data();
                gemm(1.0, dy, ld, bv, lb.t(), 1.0, self.buf(g, *a), out_a);
                let mut out_b = Layout::row_major(br, bc);
                if *tb {
                    out_b = out_b.t();
                }
                let av = self.value(*a).data();
                gemm(1.0, av, la.t(), dy, ld, 1.0, self.buf(g, *b), out_b);
            }
            Op::Linear { x, w, b } => {
                let (m, k) = shape2(self.value(*x));
                let n = self.value(*w).cols();
                let ld = Layout::row_major(m, n);
                let wv = self.value(*w).data();
                gemm(
                    1.0,
                    dy,
                    ld,
                    wv,
                    Layout::row_major(k, n).t(),
                    1.0,
                    self.buf(g, *x),
                    Layout::row_major(m, k),
                );
                let xv = self.value(*x).data();
                gemm(
                    1.0,
                    xv,
                    Layout::row_major(m, k).t(),
                    dy,
                    ld,
                    1.0,
                    self.buf(g, *w),
                    Layout::row_major(k, n),
                );
                if let Some(b) = b {
                    let db = self.buf(g, *b);
                    for row in dy.chunks(n) {
                        for (a, v) in db.iter_mut().zip(row) {
                            *a += *v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(g, *a, dy);
                self.acc(g, *b, dy);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let da: Vec<f32> = dy.iter().zip(bv).map(|(d, y)| d * y).collect();
                let db: Vec<f32> = dy.iter().zip(av).map(|(d, x)| d * x).collect();
                self.acc(g, *a, &da);
                self.acc(g, *b, &db);
            }
            Op::AddRow { x, row } => {
                self.acc(g, *x, dy);
                let n = self.value(*row).len();
                let dr = self.buf(g, *row);
                for r in dy.chunks(n) {
                    for (a, v) in dr.iter_mut().zip(r) {
                        *a += *v;
                    }
                }
            }
            Op::MulRow { x, row } => {
                let rv = self.value(*row).data();
                let n = rv.len();
                let xv = self.value(*x).data();
                let dx: Vec<f32> = dy
                    .chunks(n)
                    .flat_map(|r| r.iter().zip(rv).map(|(d, w)| d * w))
                    .collect();
                self.acc(g, *x, &dx);
                let mut dr = vec![0.0f32; n];
                for (dr_row, x_row) in dy.chunks(n).zip(xv.chunks(n)) {
                    for c in 0..n {
                        dr[c] += dr_row[c] * x_row[c];
                    }
                }
                self.acc(g, *row, &dr);
            }
            Op::Scale(a, s) => {
                let d: Vec<f32> = dy.iter().map(|v| v * s).collect();
                self.acc(g, *a, &d);
            }
            Op::AddConst(a) => self.acc(g, *a, dy),
            Op::Square(a) => {
                let av = self.value(*a).data();
                let d: Vec<f32> = dy.iter().zip(av).map(|(d, x)| 2.0 * d * x).collect();
                self.acc(g, *a, &d);
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                let d: Vec<f32> = dy.iter().zip(av).map(|(d, x)| d * gelu(*x).1).collect();
                self.acc(g, *a, &d);
            }
            Op::Tanh(a) => {
                let yv = self.nodes[i].value.as_ref().unwrap().data();
                let d: Vec<f32> = dy.iter().zip(yv).map(|(d, y)| d * (1.0 - y * y)).collect();
                self.acc(g, *a, &d);
            }
            Op::Sigmoid(a) => {
                let yv = self.nodes[i].value.as_ref().unwrap().data();
                let d: Vec<f32> = dy.iter().zip(yv).map(|(d, y)| d * y * (1.0 - y)).collect();
                self.acc(g, *a, &d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = self.value(*gamma).len();
                let gv = self.value(*gamma).data();
                let mut dx = vec![0.0f32; dy.len()];
                let mut dg = vec![0.0f32; n];
                let mut db = vec![0.0f32; n];
                for (r, rs) in rstd.iter().enumerate() {
                    let dyr = &dy[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = 0.0f64;
                    let mut mean_dx = 0.0f64;
                    for c in 0..n {
                        let dxh = (dyr[c] * gv[c]) as f64;
                        mean_d += dxh;
                        mean_dx += dxh * xh[c] as f64;
                        dg[c] += dyr[c] * xh[c];
                        db[c] += dyr[c];
                    }
                    mean_d /= n as f64;
                    mean_dx /= n as f64;
                    for c in 0..n {
                        let dxh = (dyr[c] * gv[c]) as f64;
                        dx[r * n + c] =
                            (*rs as f64 * (dxh - mean_d - xh[c] as f64 * mean_dx)) as f32;
                    }
                }
                self.acc(g, *x, &dx);
                self.acc(g, *gamma, &dg);
                self.acc(g, *beta, &db);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (nq, d) = shape2(self.value(*q));
                let nk = self.value(*k).rows();
                let dh = d / heads;
                let scale = 1.0 / (dh as f32).sqrt();
                let (qd, kd, vd) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                let mut dq = vec![0.0f32; nq * d];
                let mut dk = vec![0.0f32; nk * d];
                let mut dv = vec![0.0f32; nk * d];
                let mut dp = vec![0.0f32; nq * nk];
                for h in 0..*heads {
                    let p = &probs[h * nq * nk..(h + 1) * nq * nk];
                    // dP = dO_h · V_h^T
                    gemm(
                        1.0,
                        &dy[h * dh..],
                        Layout::strided(nq, dh, d),
                        &vd[h * dh..],
                        Layout::strided(nk, dh, d).t(),
                        0.0,
                        &mut dp,
                        Layout::row_major(nq, nk),
                    );
                    // dV_h += P^T · dO_h
                    gemm(
                        1.0,
                        p,
                        Layout::row_major(nq, nk).t(),
                        &dy[h * dh..],
                        Layout::strided(nq, dh, d),
                        1.0,
                        &mut dv[h * dh..],
                        Layout::strided(nk, dh, d),
                    );
                    // dS = P * (dP - rowsum(dP * P)) * scale
                    for r in 0..nq {
                        let pr = &p[r * nk..(r + 1) * nk];
                        let dpr = &mut dp[r * nk..(r + 1) * nk];
                        let dot: f32 = pr.iter().zip(dpr.iter()).map(|(a, b)| a * b).sum();
                        for (x, pv) in dpr.iter_mut().zip(pr) {
                            *x = pv * (*x - dot) * scale;
                        }
                    }
                    gemm(
                        1.0,
                        &dp,
                        Layout::row_major(nq, nk),
                        &kd[h * dh..],
                        Layout::strided(nk, dh, d),
                        1.0,
                        &mut dq[h * dh..],
                        Layout::strided(nq, dh, d),
                    );
                    gemm(
                        1.0,
                        &dp,
                        Layout::row_major(nq, nk).t(),
                        &qd[h * dh..],
                        Layout::strided(nq, dh, d),
                        1.0,
                        &mut dk[h * dh..],
                        Layout::strided(nk, dh, d),
                    );
                }
                self.acc(g, *q, &dq);
                self.acc(g, *k, &dk);
                self.acc(g, *v, &dv);
            }
            Op::SelectRows { x, idx } => {
                let n = self.value(*x).cols();
                let dx = self.buf(g, *x);
                for (o, &src) in idx.iter().enumerate() {
                    for c in 0..n {
                        dx[src * n + c] += dy[o * n + c];
                    }
                }
            }
            Op::Interleave { x, token, src } => {
                let n = self.value(*x).cols();
                let mut dt = vec![0.0f32; n];
                {
                    let dx = self.buf(g, *x);
                    for (o, s) in src.iter().enumerate() {
                        let row = &dy[o * n..(o + 1) * n];
                        match s {
                            Some(r) => {
                                for c in 0..n {
                                    dx[r * n + c] += row[c];
                                }
                            }
                            None => {
                                for c in 0..n {
                                    dt[c] += row[c];
                                }
                            }
                        }
                    }
                }
                if let Some(t) = token {
                    if src.iter().any(Option::is_none) {
                        self.acc(g, *t, &dt);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let m = self.value(parts[0]).rows();
                let total = dy.len() / m.max(1);
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    let mut d = Vec::with_capacity(m * w);
                    for r in 0..m {
                        d.extend_from_slice(&dy[r * total + off..r * total + off + w]);
                    }
                    self.acc(g, *p, &d);
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).cols();
                let len = self.nodes[i].value.as_ref().unwrap().cols();
                let dx = self.buf(g, *x);
                for (r, row) in dy.chunks(len).enumerate() {
                    for c in 0..len {
                        dx[r * n + start + c] += row[c];
                    }
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = shape2(self.value(*x));
                let inv = 1.0 / m as f32;
                let dx = self.buf(g, *x);
                for r in 0..m {
                    for c in 0..n {
                        dx[r * n + c] += dy[c] * inv;
                    }
                }
            }
            Op::Softmax(x) => {
                let yv = self.nodes[i].value.as_ref().unwrap();
                let n = yv.cols();
                let mut dx = vec![0.0f32; dy.len()];
                for ((dxr, dyr), yr) in dx.chunks_mut(n).zip(dy.chunks(n)).zip(yv.data().chunks(n)) {
                    let dot: f32 = dyr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        dxr[c] = yr[c] * (dyr[c] - dot);
                    }
                }
                self.acc(g, *x, &dx);
            }
            Op::LogSoftmax(x) => {
                let yv = self.nodes[i].value.as_ref().unwrap();
                let n = yv.cols();
                let mut dx = vec![0.0f32; dy.len()];
                for ((dxr, dyr), yr) in dx.chunks_mut(n).zip(dy.chunks(n)).zip(yv.data().chunks(n)) {
                    let s: f32 = dyr.iter().sum();
                    for c in 0..n {
                        dxr[c] = dyr[c] - yr[c].exp() * s;
                    }
                }
                self.acc(g, *x, &dx);
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                self.acc(g, *x, &vec![dy[0]; len]);
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                self.acc(g, *x, &vec![dy[0] / len as f32; len]);
            }
            Op::MaskedMse { pred, target, rows } => {
                let n = self.value(*pred).cols();
                let pv = self.value(*pred).data();
                let coef = 2.0 * dy[0] / (rows.len() * n) as f32;
                let dp = self.buf(g, *pred);
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..n {
                        dp[r * n + c] += coef * (pv[r * n + c] - target[k * n + c]);
                    }
                }
            }
            Op::Pick { x, index } => {
                let dx = self.buf(g, *x);
                dx[*index] += dy[0];
            }
        }
    }
}
