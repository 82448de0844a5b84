use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Sizes};
use super::graph::{log_softmax_rows, Grads, Graph, Mat, Var};
use super::params::{ParamId, ParamStore};
use super::recurrent::Recurrent;
use super::transformer::Transformer;
use super::vocab::{Vocabulary, BOS, EOS};
use crate::{Error, Result};

/// Shared interface of the two encoder-decoder families.
///
/// Source sequences arrive with EOS appended; decoder inputs start with BOS.
pub(crate) trait Network {
    fn loss(
        &self,
        g: &mut Graph,
        src: &[Vec<usize>],
        dec_in: &[Vec<usize>],
        dec_out: &[Vec<usize>],
        dropout: f64,
        smoothing: f64,
    ) -> Var;

    fn encode(&self, params: &ParamStore, src: &[usize]) -> Mat;

    /// Logits after the last position of each decoder input, one row each.
    fn step_logits(&self, params: &ParamStore, encoded: &Mat, dec_in: &[Vec<usize>]) -> Mat;

    fn output_param(&self) -> ParamId;

    fn target_embedding(&self) -> ParamId;
}

#[derive(Debug, Clone)]
enum Net {
    Recurrent(Recurrent),
    Transformer(Transformer),
}

impl Net {
    fn get(&self) -> &dyn Network {
        match self {
            Net::Recurrent(n) => n,
            Net::Transformer(n) => n,
        }
    }
}

/// Index-encoded sentence pairs (no BOS/EOS).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub tgt: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.src.iter().chain(&self.tgt).map(Vec::len).sum()
    }
}

/// Encoder output for one source sentence.
#[derive(Debug, Clone)]
pub struct Encoded(pub(crate) Mat);

/// A trained (or freshly initialised) model with its vocabularies.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    params: ParamStore,
    /// Optimiser step at which these weights were taken.
    pub step: usize,
    net: Net,
}

impl Model {
    pub fn new(config: ModelConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (vs, vt) = (src_vocab.len(), tgt_vocab.len());
        let net = match config.sizes {
            Sizes::Recurrent { hidden, embedding } => Net::Recurrent(Recurrent::new(
                &mut params,
                vs,
                vt,
                hidden,
                embedding,
                config.tied_embeddings,
                &mut rng,
            )),
            Sizes::Transformer { dim, layers, heads } => Net::Transformer(Transformer::new(
                &mut params,
                vs,
                vt,
                dim,
                layers,
                heads,
                config.tied_embeddings,
                &mut rng,
            )),
        };
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params,
            step: 0,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn src_vocab(&self) -> &Vocabulary {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocabulary {
        &self.tgt_vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Parameter used as the output projection (equal to the target embedding
    /// when embeddings are tied).
    pub fn output_param(&self) -> ParamId {
        self.net.get().output_param()
    }

    pub fn target_embedding_param(&self) -> ParamId {
        self.net.get().target_embedding()
    }

    pub fn batch_from_tokens<S: AsRef<[String]>>(&self, src: &[S], tgt: &[S]) -> Batch {
        Batch {
            src: src.iter().map(|s| self.src_vocab.encode(s.as_ref())).collect(),
            tgt: tgt.iter().map(|s| self.tgt_vocab.encode(s.as_ref())).collect(),
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() || batch.src.len() != batch.tgt.len() {
            return Err(Error::data("batch must hold at least one aligned sentence pair"));
        }
        for (i, (s, t)) in batch.src.iter().zip(&batch.tgt).enumerate() {
            if s.is_empty() || t.is_empty() {
                return Err(Error::data(format!("pair {i} has a zero-length sequence")));
            }
            if s.iter().any(|&x| x >= self.src_vocab.len()) || t.iter().any(|&x| x >= self.tgt_vocab.len()) {
                return Err(Error::data(format!("pair {i} has an out-of-vocabulary index")));
            }
        }
        Ok(())
    }

    fn build_loss(&self, g: &mut Graph, batch: &Batch, dropout: f64, smoothing: f64) -> Var {
        let src: Vec<Vec<usize>> = batch.src.iter().map(|s| with_eos(s)).collect();
        let dec_in: Vec<Vec<usize>> = batch.tgt.iter().map(|t| with_bos(t)).collect();
        let dec_out: Vec<Vec<usize>> = batch.tgt.iter().map(|t| with_eos(t)).collect();
        self.net
            .get()
            .loss(g, &src, &dec_in, &dec_out, dropout, smoothing)
    }

    /// Mean per-token smoothed loss and its gradient, without dropout.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, Grads)> {
        self.check_batch(batch)?;
        let mut g = Graph::new(&self.params);
        let loss = self.build_loss(&mut g, batch, 0.0, self.config.label_smoothing);
        Ok((g.scalar(loss), g.backward(loss)))
    }

    /// Training pass with dropout drawn from `rng`, which is advanced.
    pub fn loss_and_grads_train(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<(f64, Grads)> {
        self.check_batch(batch)?;
        let mut g = Graph::training(&self.params, rng.clone());
        let loss = self.build_loss(&mut g, batch, self.config.dropout, self.config.label_smoothing);
        let value = g.scalar(loss);
        let grads = g.backward(loss);
        *rng = g.into_rng().expect("training graph owns an rng");
        Ok((value, grads))
    }

    /// Loss of a batch without gradient (no dropout).
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let mut g = Graph::new(&self.params);
        let loss = self.build_loss(&mut g, batch, 0.0, self.config.label_smoothing);
        Ok(g.scalar(loss))
    }

    /// Summed unsmoothed negative log-likelihood and number of predicted tokens.
    pub fn nll(&self, batch: &Batch) -> Result<(f64, usize)> {
        self.check_batch(batch)?;
        let mut g = Graph::new(&self.params);
        let loss = self.build_loss(&mut g, batch, 0.0, 0.0);
        let count: usize = batch.tgt.iter().map(|t| t.len() + 1).sum();
        Ok((g.scalar(loss) * count as f64, count))
    }

    pub fn encode_ids(&self, src: &[usize]) -> Encoded {
        Encoded(self.net.get().encode(&self.params, &with_eos(src)))
    }

    pub fn encode(&self, src: &[String]) -> Encoded {
        self.encode_ids(&self.src_vocab.encode(src))
    }

    /// Log-probabilities of the next target symbol after each prefix (without BOS).
    pub fn next_logprobs(&self, enc: &Encoded, prefixes: &[Vec<usize>]) -> Mat {
        let dec_in: Vec<Vec<usize>> = prefixes.iter().map(|p| with_bos(p)).collect();
        log_softmax_rows(&self.net.get().step_logits(&self.params, &enc.0, &dec_in))
    }
}

fn with_eos(s: &[usize]) -> Vec<usize> {
    let mut v = s.to_vec();
    v.push(EOS);
    v
}

fn with_bos(s: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(s.len() + 1);
    v.push(BOS);
    v.extend_from_slice(s);
    v
}
