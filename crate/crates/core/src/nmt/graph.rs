//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are read
//! from a [`ParamStore`] without copying; [`Graph::backward`] returns one gradient
//! per parameter that took part in the pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Contiguous row range `[start, start + len)` of a packed matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seg {
    pub start: usize,
    pub len: usize,
}

impl Seg {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    fn range(self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Packs consecutive segments of the given lengths.
pub fn pack(lens: impl IntoIterator<Item = usize>) -> Vec<Seg> {
    let mut start = 0;
    lens.into_iter()
        .map(|len| {
            let s = Seg::new(start, len);
            start += len;
            s
        })
        .collect()
}

#[derive(Debug)]
struct AttnCache {
    q_segs: Vec<Seg>,
    k_segs: Vec<Seg>,
    heads: usize,
    scale: f64,
    probs: Vec<Mat>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Mat),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        cache: Box<AttnCache>,
    },
    AddSegRows(Var, Var, Vec<Seg>),
    SegSoftmax(Var, Vec<Seg>),
    SegWeightedSum(Var, Var, Vec<Seg>),
    SmoothedXent {
        logits: Var,
        targets: Vec<usize>,
        eps: f64,
        probs: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
}

/// Gradients indexed by [`ParamId`]; `None` for parameters not reached.
pub type Grads = Vec<Option<Mat>>;

fn empty() -> Mat {
    Array2::zeros((0, 0))
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl<'p> Graph<'p> {
    /// Inference graph: dropout is disabled.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
            dropout_rng: None,
        }
    }

    /// Training graph: dropout masks are drawn from `rng`.
    pub fn training(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        let mut g = Self::new(params);
        g.dropout_rng = Some(rng);
        g
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    /// Hands back the dropout generator so callers can continue its stream.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.dropout_rng
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match self.nodes[v.0].op {
            Op::Param(pid) => self.params.get(pid),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, pid: ParamId) -> Var {
        if let Some(v) = self.param_vars[pid.index()] {
            return v;
        }
        let v = self.push(empty(), Op::Param(pid));
        self.param_vars[pid.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let out = self.value(a) + &r.row(0);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let out = self.value(a) * &c;
        self.push(out, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        self.push(out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Inverted dropout; identity when not training or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if p <= 0.0 {
            return a;
        }
        let shape = self.shape(a);
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        let keep = 1.0 / (1.0 - p);
        let mask = Array2::from_shape_simple_fn(shape, || {
            if rng.gen::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        self.mul_const(a, mask)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        const EPS: f64 = 1e-6;
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std.push(is);
            Zip::from(xhat.row_mut(i))
                .and(&row)
                .for_each(|h, &v| *h = (v - mean) * is);
        }
        let out = &xhat * &self.value(gain).row(0) + &self.value(bias).row(0);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Selects rows of `table`.
    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((idx.len(), t.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).assign(&t.row(r));
        }
        self.push(out, Op::Gather(table, idx))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(out, Op::ConcatCols(parts))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(out, Op::ConcatRows(parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start, len))
    }

    /// Multi-head scaled dot-product attention over packed segments.
    ///
    /// Query segment `i` attends to key segment `i`. With `causal`, query row `r`
    /// of a segment only sees key rows `0..=r` of the same segment.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        q_segs: Vec<Seg>,
        k_segs: Vec<Seg>,
        heads: usize,
        causal: bool,
    ) -> Var {
        assert_eq!(q_segs.len(), k_segs.len());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        assert_eq!(d % heads, 0, "model dim must divide into heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(q_segs.len() * heads);
        for (qs, ks) in q_segs.iter().zip(&k_segs) {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = qv.slice(s![qs.range(), cols.clone()]);
                let kh = kv.slice(s![ks.range(), cols.clone()]);
                let vh = vv.slice(s![ks.range(), cols.clone()]);
                let mut p = qh.dot(&kh.t()) * scale;
                for (r, mut row) in p.outer_iter_mut().enumerate() {
                    if causal {
                        row.slice_mut(s![r + 1..]).fill(f64::NEG_INFINITY);
                    }
                    softmax_in_place(row.as_slice_mut().unwrap());
                }
                out.slice_mut(s![qs.range(), cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        let cache = Box::new(AttnCache {
            q_segs,
            k_segs,
            heads,
            scale,
            probs,
        });
        self.push(out, Op::Attention { q, k, v, cache })
    }

    /// Adds row `i` of `rows` to every row of segment `i` of `a`.
    pub fn add_seg_rows(&mut self, a: Var, rows: Var, segs: Vec<Seg>) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(rows);
        for (i, sg) in segs.iter().enumerate() {
            let mut block = out.slice_mut(s![sg.range(), ..]);
            block += &r.row(i);
        }
        self.push(out, Op::AddSegRows(a, rows, segs))
    }

    /// Softmax of a column vector within each segment.
    pub fn seg_softmax(&mut self, scores: Var, segs: Vec<Seg>) -> Var {
        let mut out = self.value(scores).clone();
        assert_eq!(out.ncols(), 1);
        for sg in &segs {
            let mut col = out.slice_mut(s![sg.range(), 0]);
            softmax_in_place(col.as_slice_mut().expect("contiguous column"));
        }
        self.push(out, Op::SegSoftmax(scores, segs))
    }

    /// Row `i` of the result is `Σ_r w[r] · vals[r]` over segment `i`.
    pub fn seg_weighted_sum(&mut self, weights: Var, vals: Var, segs: Vec<Seg>) -> Var {
        let (w, x) = (self.value(weights), self.value(vals));
        let mut out = Array2::zeros((segs.len(), x.ncols()));
        for (i, sg) in segs.iter().enumerate() {
            let ws = w.slice(s![sg.range(), 0]);
            let xs = x.slice(s![sg.range(), ..]);
            ndarray::linalg::general_mat_vec_mul(1.0, &xs.t(), &ws, 0.0, &mut out.row_mut(i));
        }
        self.push(out, Op::SegWeightedSum(weights, vals, segs))
    }

    /// Mean over rows of `(1−ε)·NLL(gold) + ε·mean_v NLL(v)`; a `1 × 1` result.
    pub fn smoothed_xent(&mut self, logits: Var, targets: Vec<usize>, eps: f64) -> Var {
        let lv = self.value(logits);
        let (n, vocab) = lv.dim();
        assert_eq!(n, targets.len());
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (mut row, &t) in probs.outer_iter_mut().zip(&targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let mean_logit = row.sum() / vocab as f64;
            total += (1.0 - eps) * (lse - row[t]) + eps * (lse - mean_logit);
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let out = Array2::from_elem((1, 1), total / n as f64);
        self.push(
            out,
            Op::SmoothedXent {
                logits,
                targets,
                eps,
                probs,
            },
        )
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut out: Grads = vec![None; self.params.len()];

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => accumulate(&mut out[pid.index()], g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads[a.0], g.dot(&bv.t()));
                    accumulate(&mut grads[b.0], av.t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads[a.0], g.dot(bv));
                    accumulate(&mut grads[b.0], g.t().dot(av));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], -&g);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MulConst(a, c) => accumulate(&mut grads[a.0], g * c),
                Op::Scale(a, s) => accumulate(&mut grads[a.0], g * *s),
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    accumulate(
                        &mut grads[bias.0],
                        g.sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    accumulate(
                        &mut grads[gain.0],
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let dxhat = &g * &gv.row(0);
                    let d = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let m1 = dh.sum() / d;
                        let m2 = dh.dot(&xh) / d;
                        Zip::from(dx.row_mut(r))
                            .and(&dh)
                            .and(&xh)
                            .for_each(|o, &a, &b| *o = inv_std[r] * (a - m1 - b * m2));
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Gather(table, idx) => {
                    let mut gt = Array2::zeros(self.shape(*table));
                    for (row, &r) in idx.iter().enumerate() {
                        let mut dst = gt.row_mut(r);
                        dst += &g.row(row);
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        accumulate(&mut grads[p.0], g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        accumulate(&mut grads[p.0], g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..start + len]).assign(&g);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Attention { q, k, v, cache } => {
                    let (gq, gk, gv) = self.attention_backward(*q, *k, *v, cache, &g);
                    accumulate(&mut grads[q.0], gq);
                    accumulate(&mut grads[k.0], gk);
                    accumulate(&mut grads[v.0], gv);
                }
                Op::AddSegRows(a, rows, segs) => {
                    let mut gr = Array2::zeros(self.shape(*rows));
                    for (i, sg) in segs.iter().enumerate() {
                        gr.row_mut(i)
                            .assign(&g.slice(s![sg.range(), ..]).sum_axis(Axis(0)));
                    }
                    accumulate(&mut grads[rows.0], gr);
                    accumulate(&mut grads[a.0], g);
                }
                Op::SegSoftmax(scores, segs) => {
                    let y = &node.value;
                    let mut gs = Array2::zeros(y.dim());
                    for sg in segs {
                        let ys = y.slice(s![sg.range(), 0]);
                        let gy = g.slice(s![sg.range(), 0]);
                        let dot: f64 = ys.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(gs.slice_mut(s![sg.range(), 0]))
                            .and(&ys)
                            .and(&gy)
                            .for_each(|o, &p, &d| *o = p * (d - dot));
                    }
                    accumulate(&mut grads[scores.0], gs);
                }
                Op::SegWeightedSum(weights, vals, segs) => {
                    let (w, x) = (self.value(*weights), self.value(*vals));
                    let mut gw = Array2::zeros(w.dim());
                    let mut gx = Array2::zeros(x.dim());
                    for (i, sg) in segs.iter().enumerate() {
                        let gi = g.row(i);
                        let xs = x.slice(s![sg.range(), ..]);
                        gw.slice_mut(s![sg.range(), 0]).assign(&xs.dot(&gi));
                        for r in sg.range() {
                            let mut dst = gx.row_mut(r);
                            dst.scaled_add(w[[r, 0]], &gi);
                        }
                    }
                    accumulate(&mut grads[weights.0], gw);
                    accumulate(&mut grads[vals.0], gx);
                }
                Op::SmoothedXent {
                    logits,
                    targets,
                    eps,
                    probs,
                } => {
                    let (n, vocab) = probs.dim();
                    let scale = g[[0, 0]] / n as f64;
                    let uniform = eps / vocab as f64;
                    let mut gl = probs.clone();
                    for (mut row, &t) in gl.outer_iter_mut().zip(targets) {
                        row.mapv_inplace(|p| p - uniform);
                        row[t] -= 1.0 - eps;
                    }
                    gl *= scale;
                    accumulate(&mut grads[logits.0], gl);
                }
            }
        }
        out
    }

    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        cache: &AttnCache,
        g: &Mat,
    ) -> (Mat, Mat, Mat) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / cache.heads;
        let mut gq = Array2::zeros(qv.dim());
        let mut gk = Array2::zeros(kv.dim());
        let mut gv = Array2::zeros(vv.dim());
        let mut pi = 0;
        for (qs, ks) in cache.q_segs.iter().zip(&cache.k_segs) {
            for h in 0..cache.heads {
                let cols = h * dh..(h + 1) * dh;
                let p = &cache.probs[pi];
                pi += 1;
                let go = g.slice(s![qs.range(), cols.clone()]);
                let qh = qv.slice(s![qs.range(), cols.clone()]);
                let kh = kv.slice(s![ks.range(), cols.clone()]);
                let vh = vv.slice(s![ks.range(), cols.clone()]);

                let mut gvh = gv.slice_mut(s![ks.range(), cols.clone()]);
                general_mat_mul(1.0, &p.t(), &go, 1.0, &mut gvh);

                let mut ds = go.dot(&vh.t());
                for (mut drow, prow) in ds.outer_iter_mut().zip(p.outer_iter()) {
                    let dot = drow.dot(&prow);
                    Zip::from(&mut drow)
                        .and(&prow)
                        .for_each(|x, &pp| *x = pp * (*x - dot));
                }
                let mut gqh = gq.slice_mut(s![qs.range(), cols.clone()]);
                general_mat_mul(cache.scale, &ds, &kh, 1.0, &mut gqh);
                let mut gkh = gk.slice_mut(s![ks.range(), cols]);
                general_mat_mul(cache.scale, &ds.t(), &qh, 1.0, &mut gkh);
            }
        }
        (gq, gk, gv)
    }
}

/// Numerically stable in-place softmax; `-inf` entries get probability 0.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Log-softmax of each row.
pub fn log_softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}
