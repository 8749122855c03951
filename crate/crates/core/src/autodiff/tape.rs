// SPDX-License-Identifier: Apache-2.0

//! Tape of recorded operations with reverse-mode accumulation.

use std::sync::Arc;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use super::ParamStore;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Concat(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    RowSoftmax(Var),
    SegmentSoftmax(Var, Arc<Vec<usize>>, usize),
    LayerNorm(Var, Vec<f64>),
    Scale(Var, f64),
    Sum(Var),
    RowSum(Var),
    Col(Var, usize),
    MulRows(Var, Var),
    Gather(Var, Arc<Vec<usize>>),
    ScatterAdd(Var, Arc<Vec<usize>>),
    Mse(Var, Arc<Tensor>, Arc<Vec<f64>>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Single-threaded record of a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    }
}

fn two_d(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    /// Records parameter `index` of `store`.
    pub fn param(&mut self, store: &ParamStore, index: usize) -> Var {
        self.push(store.tensors[index].clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = (two_d(ta), two_d(tb));
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(&mut out, &ta.data, &tb.data, n, k, m);
        Ok(self.push(Tensor { shape: vec![n, m], data: out }, Op::MatMul(a, b)))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(op, ta, tb));
        }
        Ok(Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Hadamard(a, b)))
    }

    /// Adds a `1 x k` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (n, k) = two_d(ta);
        if tb.shape != [1, k] {
            return Err(shape_err("add_row", ta, tb));
        }
        let mut data = ta.data.clone();
        for r in 0..n {
            for (x, b) in data[r * k..(r + 1) * k].iter_mut().zip(&tb.data) {
                *x += b;
            }
        }
        Ok(self.push(Tensor { shape: vec![n, k], data }, Op::AddRow(a, bias)))
    }

    /// Concatenates along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, ka), (n2, kb)) = (two_d(ta), two_d(tb));
        if n != n2 {
            return Err(shape_err("concat", ta, tb));
        }
        let mut data = Vec::with_capacity(n * (ka + kb));
        for r in 0..n {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        Ok(self.push(Tensor { shape: vec![n, ka + kb], data }, Op::Concat(a, b)))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (n, k) = two_d(ta);
        let mut data = ta.data.clone();
        for r in 0..n {
            softmax_in_place(&mut data[r * k..(r + 1) * k]);
        }
        self.push(Tensor { shape: vec![n, k], data }, Op::RowSoftmax(a))
    }

    /// Softmax of each column within groups of rows sharing `segment[row]`.
    pub fn segment_softmax(&mut self, a: Var, segment: Arc<Vec<usize>>, n_segments: usize) -> Result<Var> {
        let ta = self.value(a);
        let (rows, k) = two_d(ta);
        if segment.len() != rows || segment.iter().any(|&s| s >= n_segments) {
            return Err(Error::Shape {
                op: "segment_softmax",
                lhs: ta.shape.clone(),
                rhs: vec![segment.len()],
            });
        }
        let mut max = vec![f64::NEG_INFINITY; n_segments * k];
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..k {
                let m = &mut max[s * k + c];
                *m = m.max(ta.data[r * k + c]);
            }
        }
        let mut data = vec![0.0; rows * k];
        let mut denom = vec![0.0; n_segments * k];
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..k {
                let e = (ta.data[r * k + c] - max[s * k + c]).exp();
                data[r * k + c] = e;
                denom[s * k + c] += e;
            }
        }
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..k {
                data[r * k + c] /= denom[s * k + c];
            }
        }
        Ok(self.push(Tensor { shape: vec![rows, k], data }, Op::SegmentSoftmax(a, segment, n_segments)))
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (n, k) = two_d(ta);
        let mut data = vec![0.0; n * k];
        let mut inv = Vec::with_capacity(n);
        for r in 0..n {
            let row = ta.row(r);
            let mean = row.iter().sum::<f64>() / k as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, x) in data[r * k..(r + 1) * k].iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            inv.push(is);
        }
        self.push(Tensor { shape: vec![n, k], data }, Op::LayerNorm(a, inv))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `n x k -> n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (n, _) = two_d(ta);
        let data = (0..n).map(|r| ta.row(r).iter().sum()).collect();
        self.push(Tensor { shape: vec![n, 1], data }, Op::RowSum(a))
    }

    /// Column `j` as `n x 1`.
    pub fn col(&mut self, a: Var, j: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, k) = two_d(ta);
        if j >= k {
            return Err(Error::Shape {
                op: "col",
                lhs: ta.shape.clone(),
                rhs: vec![j],
            });
        }
        let data = (0..n).map(|r| ta.data[r * k + j]).collect();
        Ok(self.push(Tensor { shape: vec![n, 1], data }, Op::Col(a, j)))
    }

    /// Scales row `r` of `a` by `w[r]`; `w` is `n x 1`.
    pub fn mul_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ta, tw) = (self.value(a), self.value(w));
        let (n, k) = two_d(ta);
        if tw.shape != [n, 1] {
            return Err(shape_err("mul_rows", ta, tw));
        }
        let mut data = ta.data.clone();
        for r in 0..n {
            for x in &mut data[r * k..(r + 1) * k] {
                *x *= tw.data[r];
            }
        }
        Ok(self.push(Tensor { shape: vec![n, k], data }, Op::MulRows(a, w)))
    }

    /// `out[r] = a[index[r]]`.
    pub fn gather(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let ta = self.value(a);
        let (n, k) = two_d(ta);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Shape {
                op: "gather",
                lhs: ta.shape.clone(),
                rhs: vec![bad],
            });
        }
        let mut data = Vec::with_capacity(index.len() * k);
        for &i in index.iter() {
            data.extend_from_slice(ta.row(i));
        }
        let rows = index.len();
        Ok(self.push(Tensor { shape: vec![rows, k], data }, Op::Gather(a, index)))
    }

    /// `out[index[r]] += a[r]`, with `out` of `n_out` rows.
    pub fn scatter_add(&mut self, a: Var, index: Arc<Vec<usize>>, n_out: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, k) = two_d(ta);
        if index.len() != n || index.iter().any(|&i| i >= n_out) {
            return Err(Error::Shape {
                op: "scatter_add",
                lhs: ta.shape.clone(),
                rhs: vec![index.len(), n_out],
            });
        }
        let mut data = vec![0.0; n_out * k];
        for (r, &i) in index.iter().enumerate() {
            for (o, x) in data[i * k..(i + 1) * k].iter_mut().zip(ta.row(r)) {
                *o += x;
            }
        }
        Ok(self.push(Tensor { shape: vec![n_out, k], data }, Op::ScatterAdd(a, index)))
    }

    /// Weighted mean squared error against a constant target:
    /// `sum w (a - y)^2 / sum w`. Zero weights mask entries out.
    pub fn mse(&mut self, a: Var, target: Arc<Tensor>, weights: Arc<Vec<f64>>) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape != target.shape || weights.len() != ta.len() {
            return Err(shape_err("mse", ta, &target));
        }
        let wsum: f64 = weights.iter().sum();
        if wsum <= 0.0 {
            return Err(Error::invalid("mse needs at least one unmasked entry"));
        }
        let s: f64 = ta
            .data
            .iter()
            .zip(&target.data)
            .zip(weights.iter())
            .map(|((x, y), w)| w * (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(s / wsum), Op::Mse(a, target, weights)))
    }

    /// Reverse pass from a scalar; returns one gradient per parameter of
    /// `store` (zeros where unreached).
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Vec<Tensor>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                lhs: lt.shape.clone(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Tensor> = store.tensors.iter().map(Tensor::zeros_like).collect();

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Const => {}
                Op::Param(p) => {
                    for (o, x) in out[*p].data.iter_mut().zip(&g) {
                        *o += x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ((n, k), (_, m)) = (two_d(ta), two_d(tb));
                    matmul_bt_acc(acc(&mut grads, *a, n * k), &g, &tb.data, n, k, m);
                    matmul_at_acc(acc(&mut grads, *b, k * m), &ta.data, &g, n, k, m);
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        for (o, x) in acc(&mut grads, v, g.len()).iter_mut().zip(&g) {
                            *o += x;
                        }
                    }
                }
                Op::AddRow(a, b) => {
                    for (o, x) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *o += x;
                    }
                    let k = y.cols();
                    let gb = acc(&mut grads, *b, k);
                    for row in g.chunks(k) {
                        for (o, x) in gb.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                }
                Op::Hadamard(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    for (o, (x, gv)) in acc(&mut grads, *a, g.len()).iter_mut().zip(tb.data.iter().zip(&g)) {
                        *o += x * gv;
                    }
                    for (o, (x, gv)) in acc(&mut grads, *b, g.len()).iter_mut().zip(ta.data.iter().zip(&g)) {
                        *o += x * gv;
                    }
                }
                Op::Concat(a, b) => {
                    let (ka, kb) = (self.value(*a).cols(), self.value(*b).cols());
                    let n = y.rows();
                    {
                        let ga = acc(&mut grads, *a, n * ka);
                        for r in 0..n {
                            for c in 0..ka {
                                ga[r * ka + c] += g[r * (ka + kb) + c];
                            }
                        }
                    }
                    let gb = acc(&mut grads, *b, n * kb);
                    for r in 0..n {
                        for c in 0..kb {
                            gb[r * kb + c] += g[r * (ka + kb) + ka + c];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    for (o, (s, gv)) in acc(&mut grads, *a, g.len()).iter_mut().zip(y.data.iter().zip(&g)) {
                        *o += gv * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    for (o, (t, gv)) in acc(&mut grads, *a, g.len()).iter_mut().zip(y.data.iter().zip(&g)) {
                        *o += gv * (1.0 - t * t);
                    }
                }
                Op::Scale(a, c) => {
                    for (o, gv) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *o += gv * c;
                    }
                }
                Op::RowSoftmax(a) => {
                    let k = y.cols();
                    let ga = acc(&mut grads, *a, g.len());
                    for (r, (yr, gr)) in y.data.chunks(k).zip(g.chunks(k)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..k {
                            ga[r * k + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::SegmentSoftmax(a, seg, n_seg) => {
                    let k = y.cols();
                    let mut dot = vec![0.0; n_seg * k];
                    for (r, &s) in seg.iter().enumerate() {
                        for c in 0..k {
                            dot[s * k + c] += y.data[r * k + c] * g[r * k + c];
                        }
                    }
                    let ga = acc(&mut grads, *a, g.len());
                    for (r, &s) in seg.iter().enumerate() {
                        for c in 0..k {
                            let i = r * k + c;
                            ga[i] += y.data[i] * (g[i] - dot[s * k + c]);
                        }
                    }
                }
                Op::LayerNorm(a, inv) => {
                    let k = y.cols();
                    let ga = acc(&mut grads, *a, g.len());
                    for (r, (yr, gr)) in y.data.chunks(k).zip(g.chunks(k)).enumerate() {
                        let gm = gr.iter().sum::<f64>() / k as f64;
                        let gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / k as f64;
                        for c in 0..k {
                            ga[r * k + c] += inv[r] * (gr[c] - gm - yr[c] * gy);
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    for o in acc(&mut grads, *a, len).iter_mut() {
                        *o += g[0];
                    }
                }
                Op::RowSum(a) => {
                    let ta = self.value(*a);
                    let k = ta.cols();
                    let ga = acc(&mut grads, *a, ta.len());
                    for (r, gv) in g.iter().enumerate() {
                        for o in &mut ga[r * k..(r + 1) * k] {
                            *o += gv;
                        }
                    }
                }
                Op::Col(a, j) => {
                    let ta = self.value(*a);
                    let k = ta.cols();
                    let ga = acc(&mut grads, *a, ta.len());
                    for (r, gv) in g.iter().enumerate() {
                        ga[r * k + j] += gv;
                    }
                }
                Op::MulRows(a, w) => {
                    let (ta, tw) = (self.value(*a), self.value(*w));
                    let k = ta.cols();
                    {
                        let ga = acc(&mut grads, *a, ta.len());
                        for (r, wv) in tw.data.iter().enumerate() {
                            for c in 0..k {
                                ga[r * k + c] += g[r * k + c] * wv;
                            }
                        }
                    }
                    let gw = acc(&mut grads, *w, tw.len());
                    for (r, o) in gw.iter_mut().enumerate() {
                        *o += (0..k).map(|c| g[r * k + c] * ta.data[r * k + c]).sum::<f64>();
                    }
                }
                Op::Gather(a, index) => {
                    let ta = self.value(*a);
                    let k = ta.cols();
                    let ga = acc(&mut grads, *a, ta.len());
                    for (r, &i) in index.iter().enumerate() {
                        for c in 0..k {
                            ga[i * k + c] += g[r * k + c];
                        }
                    }
                }
                Op::ScatterAdd(a, index) => {
                    let ta = self.value(*a);
                    let k = ta.cols();
                    let ga = acc(&mut grads, *a, ta.len());
                    for (r, &i) in index.iter().enumerate() {
                        for c in 0..k {
                            ga[r * k + c] += g[i * k + c];
                        }
                    }
                }
                Op::Mse(a, target, w) => {
                    let ta = self.value(*a);
                    let wsum: f64 = w.iter().sum();
                    let ga = acc(&mut grads, *a, ta.len());
                    for i in 0..ta.len() {
                        ga[i] += g[0] * 2.0 * w[i] * (ta.data[i] - target.data[i]) / wsum;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
