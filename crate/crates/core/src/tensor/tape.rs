//! Reverse-mode automatic differentiation over 2-D matrices.
//!
//! Values are computed eagerly when an op is recorded. A tape built with
//! [`Tape::inference`] keeps no backward bookkeeping beyond the values.

use std::collections::HashMap;

use super::{Gradients, Mat, ParamId, ParamStore};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Im2Col3(Var, usize, usize),
    AvgPool2(Var, usize, usize),
    Upsample2(Var, usize, usize),
    Sum(Var),
    MseAgainst(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<'p> Tape<'p> {
    /// Tape that records everything needed for [`Tape::backward`].
    pub fn training(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// Forward-only tape.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            grad_enabled: false,
            ..Self::training(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let value = self.params.get(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            needs_grad: self.grad_enabled,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push(value, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(row), |x, r| x + r);
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(row), |x, r| x * r);
        self.push(value, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        self.push(value, Op::Silu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    /// Zero-mean, unit-variance normalisation of each row (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNormRows(a, inv_std), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows: column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Mat::from_vec(rows, cols, data);
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Mat::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols: row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut out = Mat::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    /// Unfolds 3×3 zero-padded neighbourhoods of an `h·w × c` feature map
    /// into an `h·w × 9c` matrix (neighbour-major column blocks).
    pub fn im2col3(&mut self, a: Var, h: usize, w: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows(), h * w, "im2col3: spatial size mismatch");
        let c = x.cols();
        let mut out = Mat::zeros(h * w, 9 * c);
        for y in 0..h {
            for xx in 0..w {
                let dst = out.row_mut(y * w + xx);
                for (k, (dy, dx)) in NEIGHBOURS.iter().enumerate() {
                    let sy = y as isize + dy;
                    let sx = xx as isize + dx;
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    let src = x.row(sy as usize * w + sx as usize);
                    dst[k * c..(k + 1) * c].copy_from_slice(src);
                }
            }
        }
        self.push(out, Op::Im2Col3(a, h, w), &[a])
    }

    /// 2×2 average pooling of an `h·w × c` map.
    pub fn avg_pool2(&mut self, a: Var, h: usize, w: usize) -> Var {
        let x = self.value(a);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even sides");
        let c = x.cols();
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Mat::zeros(ho * wo, c);
        for y in 0..ho {
            for xx in 0..wo {
                let dst = out.row_mut(y * wo + xx);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = x.row((2 * y + dy) * w + 2 * xx + dx);
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += 0.25 * s;
                    }
                }
            }
        }
        self.push(out, Op::AvgPool2(a, h, w), &[a])
    }

    /// Nearest-neighbour 2× upsampling of an `h·w × c` map.
    pub fn upsample2(&mut self, a: Var, h: usize, w: usize) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Mat::zeros(ho * wo, c);
        for y in 0..ho {
            for xx in 0..wo {
                out.row_mut(y * wo + xx)
                    .copy_from_slice(x.row((y / 2) * w + xx / 2));
            }
        }
        self.push(out, Op::Upsample2(a, h, w), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_vec(1, 1, vec![self.value(a).sum()]);
        self.push(value, Op::Sum(a), &[a])
    }

    /// Mean squared error against a constant target, as a `1×1` node.
    pub fn mse_against(&mut self, a: Var, target: Mat) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), target.shape(), "mse_against: shape mismatch");
        let n = x.data().len().max(1) as f64;
        let s = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / n;
        self.push(Mat::from_vec(1, 1, vec![s]), Op::MseAgainst(a, target), &[a])
    }

    /// Back-propagates from a `1×1` node and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut out = Gradients::empty(self.params.len());

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut send = |v: Var, d: Mat| accumulate(&mut grads, v, d);
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        send(*a, g.matmul_t(self.value(*b)));
                    }
                    if self.nodes[b.0].needs_grad {
                        send(*b, self.value(*a).t_matmul(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        send(*a, g.matmul(self.value(*b)));
                    }
                    if self.nodes[b.0].needs_grad {
                        send(*b, g.t_matmul(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip_map(self.value(*b), |d, y| d * y));
                    send(*b, g.zip_map(self.value(*a), |d, x| d * x));
                }
                Op::AddRow(a, row) => {
                    send(*row, column_sums(&g));
                    send(*a, g);
                }
                Op::MulRow(a, row) => {
                    let x = self.value(*a);
                    let r = self.value(*row);
                    send(*row, column_sums(&g.zip_map(x, |d, v| d * v)));
                    send(*a, broadcast_row(&g, r, |d, rv| d * rv));
                }
                Op::Scale(a, s) => send(*a, g.map(|d| d * s)),
                Op::Silu(a) => {
                    let d = g.zip_map(self.value(*a), |d, x| {
                        let s = sigmoid(x);
                        d * (s + x * s * (1.0 - s))
                    });
                    send(*a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    send(*a, d);
                }
                Op::LayerNormRows(a, inv_std) => {
                    let y = &node.value;
                    let cols = y.cols() as f64;
                    let mut d = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let mean_g = gr.iter().sum::<f64>() / cols;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for ((o, yv), gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = inv_std[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    send(*a, d);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut off = 0;
                    for p in parts {
                        let rows = self.shape(*p).0;
                        let slice = g.data()[off * cols..(off + rows) * cols].to_vec();
                        send(*p, Mat::from_vec(rows, cols, slice));
                        off += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.shape(*p).1;
                        let mut d = Mat::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        send(*p, d);
                        off += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let mut d = Mat::zeros(rows, cols);
                    let len = g.cols();
                    for r in 0..rows {
                        d.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                    }
                    send(*a, d);
                }
                Op::Im2Col3(a, h, w) => {
                    let (h, w) = (*h, *w);
                    let c = self.shape(*a).1;
                    let mut d = Mat::zeros(h * w, c);
                    for y in 0..h {
                        for x in 0..w {
                            let src = g.row(y * w + x);
                            for (k, (dy, dx)) in NEIGHBOURS.iter().enumerate() {
                                let sy = y as isize + dy;
                                let sx = x as isize + dx;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let dst = d.row_mut(sy as usize * w + sx as usize);
                                for (o, s) in dst.iter_mut().zip(&src[k * c..(k + 1) * c]) {
                                    *o += s;
                                }
                            }
                        }
                    }
                    send(*a, d);
                }
                Op::AvgPool2(a, h, w) => {
                    let (h, w) = (*h, *w);
                    let c = g.cols();
                    let wo = w / 2;
                    let mut d = Mat::zeros(h * w, c);
                    for y in 0..h {
                        for x in 0..w {
                            let src = g.row((y / 2) * wo + x / 2);
                            for (o, s) in d.row_mut(y * w + x).iter_mut().zip(src) {
                                *o = 0.25 * s;
                            }
                        }
                    }
                    send(*a, d);
                }
                Op::Upsample2(a, h, w) => {
                    let (h, w) = (*h, *w);
                    let c = g.cols();
                    let wo = 2 * w;
                    let mut d = Mat::zeros(h * w, c);
                    for y in 0..2 * h {
                        for x in 0..wo {
                            let src = g.row(y * wo + x);
                            for (o, s) in d.row_mut((y / 2) * w + x / 2).iter_mut().zip(src) {
                                *o += s;
                            }
                        }
                    }
                    send(*a, d);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    send(*a, Mat::filled(rows, cols, g.get(0, 0)));
                }
                Op::MseAgainst(a, target) => {
                    let x = self.value(*a);
                    let k = 2.0 * g.get(0, 0) / x.data().len().max(1) as f64;
                    send(*a, x.zip_map(target, |p, t| k * (p - t)));
                }
            }
        }
        out
    }
}

const NEIGHBOURS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn accumulate(grads: &mut [Option<Mat>], v: Var, d: Mat) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn broadcast_row(a: &Mat, row: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    assert_eq!(row.rows(), 1, "row operand must be 1×c");
    assert_eq!(a.cols(), row.cols(), "row operand width mismatch");
    let mut out = a.clone();
    let r = row.row(0);
    for i in 0..out.rows() {
        for (o, rv) in out.row_mut(i).iter_mut().zip(r) {
            *o = f(*o, *rv);
        }
    }
    out
}

fn column_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` at every entry of parameter `id`.
    fn numeric_grad(store: &mut ParamStore, id: ParamId, f: &dyn Fn(&ParamStore) -> f64) -> Mat {
        let h = 1e-6;
        let base = store.get(id).clone();
        let mut out = Mat::zeros(base.rows(), base.cols());
        for i in 0..base.data().len() {
            store.get_mut(id).data_mut()[i] = base.data()[i] + h;
            let up = f(store);
            store.get_mut(id).data_mut()[i] = base.data()[i] - h;
            let down = f(store);
            store.get_mut(id).data_mut()[i] = base.data()[i];
            out.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out
    }

    fn rel_err(a: &Mat, b: &Mat) -> f64 {
        let num = a.zip_map(b, |x, y| x - y).frobenius_sq().sqrt();
        let den = a.frobenius_sq().sqrt().max(b.frobenius_sq().sqrt()).max(1e-12);
        num / den
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let x = store.add("x", Mat::randn(16, 3, 1.0, &mut rng));
        let w = store.add("w", Mat::randn(27, 4, 0.3, &mut rng));
        let b = store.add("b", Mat::randn(1, 4, 0.3, &mut rng));
        let k = store.add("k", Mat::randn(5, 4, 1.0, &mut rng));
        let target = Mat::randn(16, 4, 1.0, &mut rng);
        let probe = Mat::randn(8, 4, 1.0, &mut rng);

        let forward = |store: &ParamStore, train: bool| -> (f64, Option<Gradients>) {
            let mut t = if train {
                Tape::training(store)
            } else {
                Tape::inference(store)
            };
            let xv = t.param(x);
            let cols = t.im2col3(xv, 4, 4);
            let wv = t.param(w);
            let h = t.matmul(cols, wv);
            let bv = t.param(b);
            let h = t.add_row(h, bv);
            let h = t.layer_norm_rows(h, 1e-5);
            let h = t.mul_row(h, bv);
            let h = t.silu(h);
            let kv = t.param(k);
            let s = t.matmul_t(h, kv);
            let s = t.scale(s, 0.5);
            let p = t.softmax_rows(s);
            let o = t.matmul(p, kv);
            let o2 = t.slice_cols(o, 1, 2);
            let o3 = t.slice_cols(o, 0, 2);
            let cat = t.concat_cols(&[o2, o3]);
            let pooled = t.avg_pool2(cat, 4, 4);
            let up = t.upsample2(pooled, 2, 2);
            let both = t.concat_rows(&[up, cat]);
            let mixed = t.mul(both, both);
            let sum = t.sum(mixed);
            let pr = t.constant(probe.clone());
            let prod = t.matmul_t(cat, pr);
            let diff = t.sub(o2, o3);
            let dsum = t.sum(diff);
            let l1 = t.mse_against(o, target.clone());
            let l1 = t.add(l1, dsum);
            let l2 = t.scale(sum, 0.01);
            let l3 = t.sum(prod);
            let l3 = t.scale(l3, 0.001);
            let l = t.add(l1, l2);
            let l = t.add(l, l3);
            let val = t.value(l).get(0, 0);
            let g = train.then(|| t.backward(l));
            (val, g)
        };

        let (_, grads) = forward(&store, true);
        let grads = grads.unwrap();
        for id in [x, w, b, k] {
            let num = numeric_grad(&mut store, id, &|s| forward(s, false).0);
            let ana = grads.get(id).unwrap();
            let e = rel_err(ana, &num);
            assert!(e < 1e-6, "param {} rel err {e}", store.name(id));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![1000.0, 1000.0, -1000.0]]);
        let s = softmax_rows(&m);
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((s.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inference_tape_records_no_gradients() {
        let mut store = ParamStore::new();
        let p = store.add("p", Mat::filled(1, 1, 2.0));
        let mut t = Tape::inference(&store);
        let v = t.param(p);
        let s = t.sum(v);
        assert_eq!(t.value(s).get(0, 0), 2.0);
        assert!(t.backward(s).get(p).is_none());
    }
}
