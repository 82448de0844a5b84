//! Bidirectional GRU encoder with an attentional GRU decoder (additive attention).
//!
//! Batches are processed time-major with padding; a mask blends the new state
//! with the old one so padded steps leave the state untouched.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::graph::{pack, Graph, Mat, Seg, Var};
use super::model::Network;
use super::params::{ParamId, ParamStore};
use super::vocab::PAD;

#[derive(Debug, Clone, Copy)]
struct Gru {
    w: ParamId,
    u: ParamId,
    b: ParamId,
    hidden: usize,
}

impl Gru {
    fn new(p: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: p.add_xavier(&format!("{name}.w"), input, 3 * hidden, rng),
            u: p.add_xavier(&format!("{name}.u"), hidden, 3 * hidden, rng),
            b: p.add_const(&format!("{name}.b"), 1, 3 * hidden, 0.0),
            hidden,
        }
    }

    /// One step: update gate `z`, reset gate `r`, candidate `n`; `h' = n + z⊙(h − n)`.
    fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let (w, u, b) = (g.param(self.w), g.param(self.u), g.param(self.b));
        let xw = g.matmul(x, w);
        let xw = g.add_row(xw, b);
        let hu = g.matmul(h, u);
        let (xz, xr, xn) = (g.slice_cols(xw, 0, hd), g.slice_cols(xw, hd, hd), g.slice_cols(xw, 2 * hd, hd));
        let (hz, hr, hn) = (g.slice_cols(hu, 0, hd), g.slice_cols(hu, hd, hd), g.slice_cols(hu, 2 * hd, hd));
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let rh = g.mul(r, hn);
        let n = g.add(xn, rh);
        let n = g.tanh(n);
        let d = g.sub(h, n);
        let zd = g.mul(z, d);
        g.add(n, zd)
    }
}

/// `h + mask ⊙ (new − h)` with a row mask broadcast over columns.
fn blend(g: &mut Graph, h: Var, new: Var, mask: &[bool]) -> Var {
    if mask.iter().all(|&m| m) {
        return new;
    }
    let cols = g.shape(h).1;
    let m = Array2::from_shape_fn((mask.len(), cols), |(r, _)| if mask[r] { 1.0 } else { 0.0 });
    let d = g.sub(new, h);
    let md = g.mul_const(d, m);
    g.add(h, md)
}

#[derive(Debug, Clone)]
pub(crate) struct Recurrent {
    hidden: usize,
    src_emb: ParamId,
    tgt_emb: ParamId,
    enc_fwd: Gru,
    enc_bwd: Gru,
    init_w: ParamId,
    init_b: ParamId,
    att_w: ParamId,
    att_u: ParamId,
    att_v: ParamId,
    dec: Gru,
    read_w: ParamId,
    read_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl Recurrent {
    pub(crate) fn new(
        p: &mut ParamStore,
        src_vocab: usize,
        tgt_vocab: usize,
        hidden: usize,
        embedding: usize,
        tied: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (h, e) = (hidden, embedding);
        let src_emb = p.add_embedding("src_emb", src_vocab, e, rng);
        let tgt_emb = p.add_embedding("tgt_emb", tgt_vocab, e, rng);
        let enc_fwd = Gru::new(p, "enc.fwd", e, h, rng);
        let enc_bwd = Gru::new(p, "enc.bwd", e, h, rng);
        let init_w = p.add_xavier("dec.init.w", 2 * h, h, rng);
        let init_b = p.add_const("dec.init.b", 1, h, 0.0);
        let att_w = p.add_xavier("att.w", h, h, rng);
        let att_u = p.add_xavier("att.u", 2 * h, h, rng);
        let att_v = p.add_xavier("att.v", h, 1, rng);
        let dec = Gru::new(p, "dec.gru", e + 2 * h, h, rng);
        let read_w = p.add_xavier("readout.w", h + 2 * h + e, e, rng);
        let read_b = p.add_const("readout.b", 1, e, 0.0);
        let out_w = if tied {
            tgt_emb
        } else {
            p.add_xavier("out_w", tgt_vocab, e, rng)
        };
        let out_b = p.add_const("out_b", 1, tgt_vocab, 0.0);
        Self {
            hidden,
            src_emb,
            tgt_emb,
            enc_fwd,
            enc_bwd,
            init_w,
            init_b,
            att_w,
            att_u,
            att_v,
            dec,
            read_w,
            read_b,
            out_w,
            out_b,
        }
    }

    /// Packed annotations `[fwd; bwd]`, one row per source token.
    fn encoder(&self, g: &mut Graph, src: &[Vec<usize>], dropout: f64) -> (Var, Vec<Seg>) {
        let b = src.len();
        let max_len = src.iter().map(Vec::len).max().unwrap_or(0);
        let zeros = g.constant(Array2::zeros((b, self.hidden)));
        let emb = g.param(self.src_emb);
        let inputs: Vec<Var> = (0..max_len)
            .map(|t| {
                let ids = src.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
                let x = g.gather(emb, ids);
                g.dropout(x, dropout)
            })
            .collect();
        let masks: Vec<Vec<bool>> = (0..max_len)
            .map(|t| src.iter().map(|s| t < s.len()).collect())
            .collect();

        let mut fwd = Vec::with_capacity(max_len);
        let mut h = zeros;
        for t in 0..max_len {
            let new = self.enc_fwd.step(g, inputs[t], h);
            h = blend(g, h, new, &masks[t]);
            fwd.push(h);
        }
        let mut bwd = vec![zeros; max_len];
        h = zeros;
        for t in (0..max_len).rev() {
            let new = self.enc_bwd.step(g, inputs[t], h);
            h = blend(g, h, new, &masks[t]);
            bwd[t] = h;
        }
        let fwd_all = g.concat_rows(fwd);
        let bwd_all = g.concat_rows(bwd);
        let idx: Vec<usize> = src
            .iter()
            .enumerate()
            .flat_map(|(bi, s)| (0..s.len()).map(move |t| t * b + bi))
            .collect();
        let f = g.gather(fwd_all, idx.clone());
        let r = g.gather(bwd_all, idx);
        (g.concat_cols(vec![f, r]), pack(src.iter().map(Vec::len)))
    }

    /// Readout vectors for every decoder step, time-major (`row = t·B + b`).
    fn decoder(&self, g: &mut Graph, ann: Var, segs: &[Seg], dec_in: &[Vec<usize>], dropout: f64) -> Var {
        let b = dec_in.len();
        let max_len = dec_in.iter().map(Vec::len).max().unwrap_or(0);
        let mean_w = Array2::from_shape_fn((g.shape(ann).0, 1), |(r, _)| {
            let sg = segs.iter().find(|s| r >= s.start && r < s.start + s.len).unwrap();
            1.0 / sg.len as f64
        });
        let mean_w = g.constant(mean_w);
        let mean = g.seg_weighted_sum(mean_w, ann, segs.to_vec());
        let (iw, ib) = (g.param(self.init_w), g.param(self.init_b));
        let s0 = g.matmul(mean, iw);
        let s0 = g.add_row(s0, ib);
        let mut s = g.tanh(s0);

        let att_u = g.param(self.att_u);
        let ua = g.matmul(ann, att_u);
        let (att_w, att_v) = (g.param(self.att_w), g.param(self.att_v));
        let emb = g.param(self.tgt_emb);
        let (rw, rb) = (g.param(self.read_w), g.param(self.read_b));

        let mut readouts = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let mask: Vec<bool> = dec_in.iter().map(|d| t < d.len()).collect();
            let ws = g.matmul(s, att_w);
            let e = g.add_seg_rows(ua, ws, segs.to_vec());
            let e = g.tanh(e);
            let scores = g.matmul(e, att_v);
            let alpha = g.seg_softmax(scores, segs.to_vec());
            let ctx = g.seg_weighted_sum(alpha, ann, segs.to_vec());
            let ids = dec_in.iter().map(|d| d.get(t).copied().unwrap_or(PAD)).collect();
            let y = g.gather(emb, ids);
            let y = g.dropout(y, dropout);
            let x = g.concat_cols(vec![y, ctx]);
            let new = self.dec.step(g, x, s);
            let r = g.concat_cols(vec![new, ctx, y]);
            let r = g.matmul(r, rw);
            let r = g.add_row(r, rb);
            let r = g.tanh(r);
            readouts.push(r);
            s = blend(g, s, new, &mask);
        }
        debug_assert_eq!(g.shape(readouts[0]).0, b);
        g.concat_rows(readouts)
    }

    fn logits(&self, g: &mut Graph, h: Var) -> Var {
        let (w, b) = (g.param(self.out_w), g.param(self.out_b));
        let l = g.matmul_t(h, w);
        g.add_row(l, b)
    }
}

impl Network for Recurrent {
    fn loss(
        &self,
        g: &mut Graph,
        src: &[Vec<usize>],
        dec_in: &[Vec<usize>],
        dec_out: &[Vec<usize>],
        dropout: f64,
        smoothing: f64,
    ) -> Var {
        let (ann, segs) = self.encoder(g, src, dropout);
        let read = self.decoder(g, ann, &segs, dec_in, dropout);
        let b = dec_in.len();
        let idx: Vec<usize> = dec_in
            .iter()
            .enumerate()
            .flat_map(|(bi, d)| (0..d.len()).map(move |t| t * b + bi))
            .collect();
        let read = g.gather(read, idx);
        let read = g.dropout(read, dropout);
        let logits = self.logits(g, read);
        g.smoothed_xent(logits, dec_out.concat(), smoothing)
    }

    fn encode(&self, params: &ParamStore, src: &[usize]) -> Mat {
        let mut g = Graph::new(params);
        let (ann, _) = self.encoder(&mut g, &[src.to_vec()], 0.0);
        g.value(ann).clone()
    }

    fn step_logits(&self, params: &ParamStore, encoded: &Mat, dec_in: &[Vec<usize>]) -> Mat {
        let mut g = Graph::new(params);
        let n = encoded.nrows();
        let k = dec_in.len();
        let mut rep = Array2::zeros((n * k, encoded.ncols()));
        for i in 0..k {
            rep.slice_mut(ndarray::s![i * n..(i + 1) * n, ..]).assign(encoded);
        }
        let ann = g.constant(rep);
        let segs = pack(std::iter::repeat(n).take(k));
        let read = self.decoder(&mut g, ann, &segs, dec_in, 0.0);
        let last: Vec<usize> = dec_in
            .iter()
            .enumerate()
            .map(|(bi, d)| (d.len() - 1) * k + bi)
            .collect();
        let read = g.gather(read, last);
        let logits = self.logits(&mut g, read);
        g.value(logits).clone()
    }

    fn output_param(&self) -> ParamId {
        self.out_w
    }

    fn target_embedding(&self) -> ParamId {
        self.tgt_emb
    }
}
