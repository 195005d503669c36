//! Tape-based reverse-mode automatic differentiation over [`Mat`].
//!
//! A [`Graph`] records every operation as a node holding its value and
//! enough cached context to run the vector-Jacobian product later.
//! [`Graph::backward`] walks the tape in reverse from a scalar loss and
//! accumulates gradients for every node that requires them.
//!
//! The op set is exactly what the encoder and objective need — dense
//! products (including the `x @ W^T` form so weights never get
//! materialized transposed), layer norm, GELU, row softmax, clamped log,
//! row gather/concat/slice for token bookkeeping, and a fused
//! cosine-similarity op against a prototype bank.
//!
//! Generic over `f32`/`f64`: training runs in f32, gradient verification
//! against finite differences runs in f64.

use crate::mat::{dot, Mat, Scalar};

pub type Var = usize;

/// Norms below this are treated as zero in cosine scores (score and
/// gradient both zero) instead of dividing by almost-nothing.
const COSINE_NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Scale(Var, T),
    /// a @ b
    MatMul(Var, Var),
    /// a @ b^T
    MatMulNT(Var, Var),
    SoftmaxRows(Var),
    /// ln(max(x, floor)); zero gradient where the floor engages.
    LogClamped(Var, T),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    /// (p x d) + (1 x d), bias broadcast down rows.
    AddRowBroadcast(Var, Var),
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    /// Select rows by index (token masking). Indices may omit rows.
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    /// Cosine similarity of a single row `h` (1 x d) against every row of
    /// a prototype bank `q` (n x d), clamped into [-1, 1].
    CosineScores { q: Var, h: Var },
}

struct Node<T> {
    op: Op<T>,
    value: Mat<T>,
    requires_grad: bool,
    /// Op-specific cache: LayerNorm keeps x-hat, Gelu keeps tanh(u),
    /// CosineScores keeps the unclamped scores.
    aux_mat: Option<Mat<T>>,
    /// LayerNorm: per-row inverse std. CosineScores: [|h|, |q_0|, ...].
    aux_vec: Vec<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v].value
    }

    fn push(&mut self, op: Op<T>, value: Mat<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad, aux_mat: None, aux_vec: Vec::new() });
        self.nodes.len() - 1
    }

    fn push_aux(
        &mut self,
        op: Op<T>,
        value: Mat<T>,
        requires_grad: bool,
        aux_mat: Option<Mat<T>>,
        aux_vec: Vec<T>,
    ) -> Var {
        self.nodes.push(Node { op, value, requires_grad, aux_mat, aux_vec });
        self.nodes.len() - 1
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v].requires_grad
    }

    pub fn leaf(&mut self, value: Mat<T>, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Constant input — never differentiated.
    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a].value.add(&self.nodes[b].value);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), v, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a].value.sub(&self.nodes[b].value);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), v, rg)
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a].value.zip_with(&self.nodes[b].value, |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::MulElem(a, b), v, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.nodes[a].value.scale(c);
        let rg = self.needs(a);
        self.push(Op::Scale(a, c), v, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), v, rg)
    }

    /// `a @ b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a].value.matmul_nt(&self.nodes[b].value);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::MatMulNT(a, b), v, rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a].value;
        let mut v = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            softmax_into(x.row(r), v.row_mut(r));
        }
        let rg = self.needs(a);
        self.push(Op::SoftmaxRows(a), v, rg)
    }

    pub fn log_clamped(&mut self, a: Var, floor: T) -> Var {
        let v = self.nodes[a].value.map(|x| x.max(floor).ln());
        let rg = self.needs(a);
        self.push(Op::LogClamped(a, floor), v, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let x = &self.nodes[a].value;
        let half = T::from_f64(0.5);
        let one = T::one();
        let mut tanh_cache = Mat::zeros(x.rows(), x.cols());
        let mut v = Mat::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let xi = x.as_slice()[i];
            let t = gelu_inner(xi).tanh();
            tanh_cache.as_mut_slice()[i] = t;
            v.as_mut_slice()[i] = half * xi * (one + t);
        }
        let rg = self.needs(a);
        self.push_aux(Op::Gelu(a), v, rg, Some(tanh_cache), Vec::new())
    }

    /// Row-wise layer norm with affine parameters (`gamma`, `beta` are
    /// 1 x d).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = &self.nodes[x].value;
        let g = &self.nodes[gamma].value;
        let b = &self.nodes[beta].value;
        let d = xv.cols();
        assert_eq!(g.shape(), (1, d), "gamma must be 1 x d");
        assert_eq!(b.shape(), (1, d), "beta must be 1 x d");
        let eps = T::from_f64(LN_EPS);
        let dn = T::from_f64(d as f64);
        let mut xhat = Mat::zeros(xv.rows(), d);
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut v = Mat::zeros(xv.rows(), d);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mut mean = T::zero();
            for &e in row {
                mean += e;
            }
            mean /= dn;
            let mut var = T::zero();
            for &e in row {
                var += (e - mean) * (e - mean);
            }
            var /= dn;
            let is = (var + eps).sqrt().recip();
            inv_std.push(is);
            for c in 0..d {
                let xh = (row[c] - mean) * is;
                xhat[(r, c)] = xh;
                v[(r, c)] = g.as_slice()[c] * xh + b.as_slice()[c];
            }
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push_aux(Op::LayerNorm { x, gamma, beta }, v, rg, Some(xhat), inv_std)
    }

    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Var {
        let x = &self.nodes[a].value;
        let b = &self.nodes[bias].value;
        assert_eq!(b.shape(), (1, x.cols()), "bias must be 1 x cols");
        let mut v = x.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            for (o, &bv) in row.iter_mut().zip(b.as_slice()) {
                *o += bv;
            }
        }
        let rg = self.needs(a) || self.needs(bias);
        self.push(Op::AddRowBroadcast(a, bias), v, rg)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(x.cols(), y.cols(), "concat_rows column mismatch");
        let mut data = Vec::with_capacity((x.rows() + y.rows()) * x.cols());
        data.extend_from_slice(x.as_slice());
        data.extend_from_slice(y.as_slice());
        let v = Mat::from_vec(x.rows() + y.rows(), x.cols(), data);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::ConcatRows(a, b), v, rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(x.rows(), y.rows(), "concat_cols row mismatch");
        let mut v = Mat::zeros(x.rows(), x.cols() + y.cols());
        for r in 0..x.rows() {
            v.row_mut(r)[..x.cols()].copy_from_slice(x.row(r));
            v.row_mut(r)[x.cols()..].copy_from_slice(y.row(r));
        }
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::ConcatCols(a, b), v, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = &self.nodes[a].value;
        assert!(start < end && end <= x.rows(), "slice_rows bounds");
        let v = Mat::from_vec(
            end - start,
            x.cols(),
            x.as_slice()[start * x.cols()..end * x.cols()].to_vec(),
        );
        let rg = self.needs(a);
        self.push(Op::SliceRows(a, start, end), v, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = &self.nodes[a].value;
        assert!(start < end && end <= x.cols(), "slice_cols bounds");
        let mut v = Mat::zeros(x.rows(), end - start);
        for r in 0..x.rows() {
            v.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        let rg = self.needs(a);
        self.push(Op::SliceCols(a, start, end), v, rg)
    }

    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let x = &self.nodes[a].value;
        assert!(!indices.is_empty(), "gather_rows needs at least one row");
        let mut v = Mat::zeros(indices.len(), x.cols());
        for (i, &src) in indices.iter().enumerate() {
            assert!(src < x.rows(), "gather index {src} out of range");
            v.row_mut(i).copy_from_slice(x.row(src));
        }
        let rg = self.needs(a);
        self.push(Op::GatherRows(a, indices), v, rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a].value;
        let inv = T::from_f64(1.0 / x.rows() as f64);
        let mut v = Mat::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (o, &e) in v.row_mut(0).iter_mut().zip(x.row(r)) {
                *o = e.mul_add(inv, *o);
            }
        }
        let rg = self.needs(a);
        self.push(Op::MeanRows(a), v, rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a].value.sum();
        let rg = self.needs(a);
        self.push(Op::SumAll(a), Mat::from_vec(1, 1, vec![s]), rg)
    }

    /// Cosine similarity of `h` (1 x d) against each row of `q` (n x d):
    /// `s_l = <q_l, h> / (|q_l| |h|)`, clamped into [-1, 1]. Rows (or `h`)
    /// with vanishing norm score 0 with zero gradient.
    pub fn cosine_scores(&mut self, q: Var, h: Var) -> Var {
        let qv = &self.nodes[q].value;
        let hv = &self.nodes[h].value;
        assert_eq!(hv.rows(), 1, "h must be a single row");
        assert_eq!(qv.cols(), hv.cols(), "prototype dim mismatch");
        let n = qv.rows();
        let floor = T::from_f64(COSINE_NORM_FLOOR);
        let h_norm = dot(hv.row(0), hv.row(0)).sqrt();
        let mut aux = Vec::with_capacity(n + 1);
        aux.push(h_norm);
        let mut raw = Mat::zeros(1, n);
        let mut v = Mat::zeros(1, n);
        for l in 0..n {
            let qn = dot(qv.row(l), qv.row(l)).sqrt();
            aux.push(qn);
            let s = if qn <= floor || h_norm <= floor {
                T::zero()
            } else {
                dot(qv.row(l), hv.row(0)) / (qn * h_norm)
            };
            raw[(0, l)] = s;
            v[(0, l)] = s.min(T::one()).max(-T::one());
        }
        let rg = self.needs(q) || self.needs(h);
        self.push_aux(Op::CosineScores { q, h }, v, rg, Some(raw), aux)
    }

    /// Reverse pass from a scalar (1 x 1) node. Returns one gradient slot
    /// per node; slots are `Some` for nodes that both require gradients
    /// and influence the loss.
    pub fn backward(&self, loss: Var) -> Vec<Option<Mat<T>>> {
        assert_eq!(self.nodes[loss].value.shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Mat<T>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Mat::filled(1, 1, T::one()));

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.accumulate_parents(id, &g, &mut grads);
            // Re-store: callers read leaf gradients after the pass; interior
            // gradients stay available for debugging.
            grads[id] = Some(g);
        }
        // Drop gradients the caller must not rely on.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *slot = None;
            }
        }
        grads
    }

    fn accumulate_parents(&self, id: Var, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let node = &self.nodes[id];
        let send = |var: Var, delta: Mat<T>, grads: &mut [Option<Mat<T>>]| {
            if !self.nodes[var].requires_grad {
                return;
            }
            match &mut grads[var] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.scale(-T::one()), grads);
            }
            Op::MulElem(a, b) => {
                send(*a, g.zip_with(&self.nodes[*b].value, |gv, bv| gv * bv), grads);
                send(*b, g.zip_with(&self.nodes[*a].value, |gv, av| gv * av), grads);
            }
            Op::Scale(a, c) => send(*a, g.scale(*c), grads),
            Op::MatMul(a, b) => {
                // c = a @ b: da = g @ b^T, db = a^T @ g.
                if self.needs(*a) {
                    send(*a, g.matmul_nt(&self.nodes[*b].value), grads);
                }
                if self.needs(*b) {
                    send(*b, self.nodes[*a].value.matmul_tn(g), grads);
                }
            }
            Op::MatMulNT(a, b) => {
                // c = a @ b^T: da = g @ b, db = g^T @ a.
                if self.needs(*a) {
                    send(*a, g.matmul(&self.nodes[*b].value), grads);
                }
                if self.needs(*b) {
                    send(*b, g.matmul_tn(&self.nodes[*a].value), grads);
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut dx = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let inner = dot(gr, yr);
                    for c in 0..y.cols() {
                        dx[(r, c)] = yr[c] * (gr[c] - inner);
                    }
                }
                send(*a, dx, grads);
            }
            Op::LogClamped(a, floor) => {
                let x = &self.nodes[*a].value;
                let dx = g.zip_with(x, |gv, xv| {
                    if xv > *floor {
                        gv / xv
                    } else {
                        T::zero()
                    }
                });
                send(*a, dx, grads);
            }
            Op::Gelu(a) => {
                let x = &self.nodes[*a].value;
                let tanh_cache = node.aux_mat.as_ref().expect("gelu cache");
                let half = T::from_f64(0.5);
                let one = T::one();
                let c1 = T::from_f64(GELU_C);
                let c2 = T::from_f64(3.0 * GELU_A);
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for i in 0..x.len() {
                    let xi = x.as_slice()[i];
                    let t = tanh_cache.as_slice()[i];
                    let du = c1 * (one + c2 * xi * xi);
                    let d = half * (one + t) + half * xi * (one - t * t) * du;
                    dx.as_mut_slice()[i] = g.as_slice()[i] * d;
                }
                send(*a, dx, grads);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xhat = node.aux_mat.as_ref().expect("layer norm cache");
                let inv_std = &node.aux_vec;
                let gv = &self.nodes[*gamma].value;
                let d = xhat.cols();
                let dn = T::from_f64(d as f64);
                if self.needs(*x) {
                    let mut dx = Mat::zeros(xhat.rows(), d);
                    for r in 0..xhat.rows() {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        let mut mean_dxhat = T::zero();
                        let mut mean_dxhat_xhat = T::zero();
                        for c in 0..d {
                            let dxh = gr[c] * gv.as_slice()[c];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xr[c];
                        }
                        mean_dxhat /= dn;
                        mean_dxhat_xhat /= dn;
                        for c in 0..d {
                            let dxh = gr[c] * gv.as_slice()[c];
                            dx[(r, c)] = inv_std[r] * (dxh - mean_dxhat - xr[c] * mean_dxhat_xhat);
                        }
                    }
                    send(*x, dx, grads);
                }
                if self.needs(*gamma) {
                    let mut dg = Mat::zeros(1, d);
                    for r in 0..xhat.rows() {
                        for c in 0..d {
                            dg[(0, c)] += g[(r, c)] * xhat[(r, c)];
                        }
                    }
                    send(*gamma, dg, grads);
                }
                if self.needs(*beta) {
                    let mut db = Mat::zeros(1, d);
                    for r in 0..g.rows() {
                        for c in 0..d {
                            db[(0, c)] += g[(r, c)];
                        }
                    }
                    send(*beta, db, grads);
                }
            }
            Op::AddRowBroadcast(a, bias) => {
                send(*a, g.clone(), grads);
                if self.needs(*bias) {
                    let mut db = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            db[(0, c)] += g[(r, c)];
                        }
                    }
                    send(*bias, db, grads);
                }
            }
            Op::ConcatRows(a, b) => {
                let ra = self.nodes[*a].value.rows();
                let cols = g.cols();
                send(
                    *a,
                    Mat::from_vec(ra, cols, g.as_slice()[..ra * cols].to_vec()),
                    grads,
                );
                send(
                    *b,
                    Mat::from_vec(g.rows() - ra, cols, g.as_slice()[ra * cols..].to_vec()),
                    grads,
                );
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.cols();
                let mut da = Mat::zeros(g.rows(), ca);
                let mut db = Mat::zeros(g.rows(), g.cols() - ca);
                for r in 0..g.rows() {
                    da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                send(*a, da, grads);
                send(*b, db, grads);
            }
            Op::SliceRows(a, start, _end) => {
                let x = &self.nodes[*a].value;
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    dx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                send(*a, dx, grads);
            }
            Op::SliceCols(a, start, _end) => {
                let x = &self.nodes[*a].value;
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                send(*a, dx, grads);
            }
            Op::GatherRows(a, indices) => {
                let x = &self.nodes[*a].value;
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for (i, &src) in indices.iter().enumerate() {
                    for (o, &gv) in dx.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += gv;
                    }
                }
                send(*a, dx, grads);
            }
            Op::MeanRows(a) => {
                let x = &self.nodes[*a].value;
                let inv = T::from_f64(1.0 / x.rows() as f64);
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for (o, &gv) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = gv * inv;
                    }
                }
                send(*a, dx, grads);
            }
            Op::SumAll(a) => {
                let x = &self.nodes[*a].value;
                send(*a, Mat::filled(x.rows(), x.cols(), g[(0, 0)]), grads);
            }
            Op::CosineScores { q, h } => {
                let qv = &self.nodes[*q].value;
                let hv = &self.nodes[*h].value;
                let raw = node.aux_mat.as_ref().expect("cosine cache");
                let h_norm = node.aux_vec[0];
                let floor = T::from_f64(COSINE_NORM_FLOOR);
                let n = qv.rows();
                let d = qv.cols();
                let mut dh = Mat::zeros(1, d);
                let mut dq = Mat::zeros(n, d);
                for l in 0..n {
                    let qn = node.aux_vec[l + 1];
                    let s = raw[(0, l)];
                    // Zero-norm guard and clamp saturation both kill the
                    // gradient for this row.
                    if qn <= floor || h_norm <= floor || s.abs() > T::one() {
                        continue;
                    }
                    let gl = g[(0, l)];
                    let inv_qh = (qn * h_norm).recip();
                    let inv_h2 = (h_norm * h_norm).recip();
                    let inv_q2 = (qn * qn).recip();
                    let hr = hv.row(0);
                    let qr = qv.row(l);
                    if self.needs(*h) {
                        for c in 0..d {
                            dh[(0, c)] += gl * (qr[c] * inv_qh - s * hr[c] * inv_h2);
                        }
                    }
                    if self.needs(*q) {
                        for c in 0..d {
                            dq[(l, c)] += gl * (hr[c] * inv_qh - s * qr[c] * inv_q2);
                        }
                    }
                }
                send(*h, dh, grads);
                send(*q, dq, grads);
            }
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_A: f64 = 0.044_715;
/// sqrt(2 / pi)
const GELU_C: f64 = 0.797_884_560_802_865_4;

#[inline]
fn gelu_inner<T: Scalar>(x: T) -> T {
    T::from_f64(GELU_C) * (x + T::from_f64(GELU_A) * x * x * x)
}

/// Numerically stable row softmax into a preallocated slice.
pub fn softmax_into<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - m).exp();
        *o = e;
        sum += e;
    }
    let inv = sum.recip();
    for o in out.iter_mut() {
        *o = *o * inv;
    }
}
