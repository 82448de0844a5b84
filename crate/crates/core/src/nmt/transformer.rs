//! Pre-norm Transformer encoder-decoder over packed (unpadded) sequences.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::graph::{pack, Graph, Mat, Seg, Var};
use super::model::Network;
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct AttnBlock {
    norm: Norm,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct FfnBlock {
    norm: Norm,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct EncLayer {
    attn: AttnBlock,
    ffn: FfnBlock,
}

#[derive(Debug, Clone)]
struct DecLayer {
    self_attn: AttnBlock,
    cross_attn: AttnBlock,
    ffn: FfnBlock,
}

#[derive(Debug, Clone)]
pub(crate) struct Transformer {
    dim: usize,
    heads: usize,
    src_emb: ParamId,
    tgt_emb: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    enc: Vec<EncLayer>,
    enc_norm: Norm,
    dec: Vec<DecLayer>,
    dec_norm: Norm,
}

fn norm(p: &mut ParamStore, name: &str, d: usize) -> Norm {
    Norm {
        gain: p.add_const(&format!("{name}.gain"), 1, d, 1.0),
        bias: p.add_const(&format!("{name}.bias"), 1, d, 0.0),
    }
}

fn attn_block(p: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> AttnBlock {
    AttnBlock {
        norm: norm(p, &format!("{name}.norm"), d),
        wq: p.add_xavier(&format!("{name}.wq"), d, d, rng),
        wk: p.add_xavier(&format!("{name}.wk"), d, d, rng),
        wv: p.add_xavier(&format!("{name}.wv"), d, d, rng),
        wo: p.add_xavier(&format!("{name}.wo"), d, d, rng),
    }
}

fn ffn_block(p: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> FfnBlock {
    FfnBlock {
        norm: norm(p, &format!("{name}.norm"), d),
        w1: p.add_xavier(&format!("{name}.w1"), d, 4 * d, rng),
        b1: p.add_const(&format!("{name}.b1"), 1, 4 * d, 0.0),
        w2: p.add_xavier(&format!("{name}.w2"), 4 * d, d, rng),
        b2: p.add_const(&format!("{name}.b2"), 1, d, 0.0),
    }
}

/// Sinusoidal position encodings for the given positions.
pub fn positional_encoding(positions: &[usize], dim: usize) -> Mat {
    let mut pe = Array2::zeros((positions.len(), dim));
    for (r, &pos) in positions.iter().enumerate() {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            pe[[r, 2 * i]] = angle.sin();
            pe[[r, 2 * i + 1]] = angle.cos();
        }
    }
    pe
}

fn positions(segs: &[Seg]) -> Vec<usize> {
    segs.iter().flat_map(|s| 0..s.len).collect()
}

impl Transformer {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        p: &mut ParamStore,
        src_vocab: usize,
        tgt_vocab: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        tied: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let src_emb = p.add_embedding("src_emb", src_vocab, dim, rng);
        let tgt_emb = p.add_embedding("tgt_emb", tgt_vocab, dim, rng);
        let out_w = if tied {
            tgt_emb
        } else {
            p.add_xavier("out_w", tgt_vocab, dim, rng)
        };
        let out_b = p.add_const("out_b", 1, tgt_vocab, 0.0);
        let enc = (0..layers)
            .map(|l| EncLayer {
                attn: attn_block(p, &format!("enc.{l}.self"), dim, rng),
                ffn: ffn_block(p, &format!("enc.{l}.ffn"), dim, rng),
            })
            .collect();
        let enc_norm = norm(p, "enc.norm", dim);
        let dec = (0..layers)
            .map(|l| DecLayer {
                self_attn: attn_block(p, &format!("dec.{l}.self"), dim, rng),
                cross_attn: attn_block(p, &format!("dec.{l}.cross"), dim, rng),
                ffn: ffn_block(p, &format!("dec.{l}.ffn"), dim, rng),
            })
            .collect();
        let dec_norm = norm(p, "dec.norm", dim);
        Self {
            dim,
            heads,
            src_emb,
            tgt_emb,
            out_w,
            out_b,
            enc,
            enc_norm,
            dec,
            dec_norm,
        }
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, n: Norm) -> Var {
        let (gain, bias) = (g.param(n.gain), g.param(n.bias));
        g.layer_norm(x, gain, bias)
    }

    fn embed(&self, g: &mut Graph, table: ParamId, ids: Vec<usize>, segs: &[Seg], dropout: f64) -> Var {
        let t = g.param(table);
        let e = g.gather(t, ids);
        let e = g.scale(e, (self.dim as f64).sqrt());
        let pe = g.constant(positional_encoding(&positions(segs), self.dim));
        let x = g.add(e, pe);
        g.dropout(x, dropout)
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Option<Var>,
        b: AttnBlock,
        q_segs: &[Seg],
        k_segs: &[Seg],
        causal: bool,
        dropout: f64,
    ) -> Var {
        let h = self.layer_norm(g, x, b.norm);
        let kv_src = memory.unwrap_or(h);
        let (wq, wk, wv, wo) = (g.param(b.wq), g.param(b.wk), g.param(b.wv), g.param(b.wo));
        let q = g.matmul(h, wq);
        let k = g.matmul(kv_src, wk);
        let v = g.matmul(kv_src, wv);
        let a = g.attention(q, k, v, q_segs.to_vec(), k_segs.to_vec(), self.heads, causal);
        let o = g.matmul(a, wo);
        let o = g.dropout(o, dropout);
        g.add(x, o)
    }

    fn feed_forward(&self, g: &mut Graph, x: Var, b: FfnBlock, dropout: f64) -> Var {
        let h = self.layer_norm(g, x, b.norm);
        let (w1, b1, w2, b2) = (g.param(b.w1), g.param(b.b1), g.param(b.w2), g.param(b.b2));
        let h = g.matmul(h, w1);
        let h = g.add_row(h, b1);
        let h = g.relu(h);
        let h = g.matmul(h, w2);
        let h = g.add_row(h, b2);
        let h = g.dropout(h, dropout);
        g.add(x, h)
    }

    fn encoder(&self, g: &mut Graph, src: &[Vec<usize>], dropout: f64) -> (Var, Vec<Seg>) {
        let segs = pack(src.iter().map(Vec::len));
        let ids = src.concat();
        let mut x = self.embed(g, self.src_emb, ids, &segs, dropout);
        for layer in &self.enc {
            x = self.attend(g, x, None, layer.attn, &segs, &segs, false, dropout);
            x = self.feed_forward(g, x, layer.ffn, dropout);
        }
        (self.layer_norm(g, x, self.enc_norm), segs)
    }

    fn decoder(
        &self,
        g: &mut Graph,
        dec_in: &[Vec<usize>],
        memory: Var,
        mem_segs: &[Seg],
        dropout: f64,
    ) -> (Var, Vec<Seg>) {
        let segs = pack(dec_in.iter().map(Vec::len));
        let ids = dec_in.concat();
        let mut y = self.embed(g, self.tgt_emb, ids, &segs, dropout);
        for layer in &self.dec {
            y = self.attend(g, y, None, layer.self_attn, &segs, &segs, true, dropout);
            y = self.attend(g, y, Some(memory), layer.cross_attn, &segs, mem_segs, false, dropout);
            y = self.feed_forward(g, y, layer.ffn, dropout);
        }
        (self.layer_norm(g, y, self.dec_norm), segs)
    }

    fn logits(&self, g: &mut Graph, h: Var) -> Var {
        let (w, b) = (g.param(self.out_w), g.param(self.out_b));
        let l = g.matmul_t(h, w);
        g.add_row(l, b)
    }
}

impl Network for Transformer {
    fn loss(
        &self,
        g: &mut Graph,
        src: &[Vec<usize>],
        dec_in: &[Vec<usize>],
        dec_out: &[Vec<usize>],
        dropout: f64,
        smoothing: f64,
    ) -> Var {
        let (memory, mem_segs) = self.encoder(g, src, dropout);
        let (h, _) = self.decoder(g, dec_in, memory, &mem_segs, dropout);
        let logits = self.logits(g, h);
        g.smoothed_xent(logits, dec_out.concat(), smoothing)
    }

    fn encode(&self, params: &ParamStore, src: &[usize]) -> Mat {
        let mut g = Graph::new(params);
        let (memory, _) = self.encoder(&mut g, &[src.to_vec()], 0.0);
        g.value(memory).clone()
    }

    fn step_logits(&self, params: &ParamStore, encoded: &Mat, dec_in: &[Vec<usize>]) -> Mat {
        let mut g = Graph::new(params);
        let n = encoded.nrows();
        let k = dec_in.len();
        let mut rep = Array2::zeros((n * k, encoded.ncols()));
        for i in 0..k {
            rep.slice_mut(ndarray::s![i * n..(i + 1) * n, ..]).assign(encoded);
        }
        let memory = g.constant(rep);
        let mem_segs = pack(std::iter::repeat(n).take(k));
        let (h, segs) = self.decoder(&mut g, dec_in, memory, &mem_segs, 0.0);
        let last: Vec<usize> = segs.iter().map(|s| s.start + s.len - 1).collect();
        let h = g.gather(h, last);
        let logits = self.logits(&mut g, h);
        g.value(logits).clone()
    }

    fn output_param(&self) -> ParamId {
        self.out_w
    }

    fn target_embedding(&self) -> ParamId {
        self.tgt_emb
    }
}
