//! Minibatch training with Adam, warmup/inverse-sqrt schedule, early stopping
//! on dev perplexity and model selection on dev BLEU.

use ndarray::Zip;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{lr_at, ModelConfig, TrainingConfig};
use super::graph::{Grads, Mat};
use super::model::{Batch, Model};
use super::params::ParamStore;
use super::vocab::Vocabulary;
use crate::decode::{translate_batch, DecodeOptions};
use crate::{annotate, bpe, eval, Error, Result, Tokens};

/// Parallel sentences at the sub-word level (tags included where the arm has them).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParallelCorpus {
    pub src: Vec<Tokens>,
    pub tgt: Vec<Tokens>,
}

impl ParallelCorpus {
    pub fn new(src: Vec<Tokens>, tgt: Vec<Tokens>) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::data(format!(
                "parallel corpus sides differ in length ({} vs {})",
                src.len(),
                tgt.len()
            )));
        }
        Ok(Self { src, tgt })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    pub step: usize,
    /// Mean smoothed training loss since the previous validation.
    pub train_loss: Option<f64>,
    pub dev_perplexity: f64,
    pub dev_bleu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best dev BLEU.
    pub model: Model,
    pub log: Vec<ValidationRecord>,
    pub steps: usize,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn best_bleu(&self) -> f64 {
        self.log.iter().map(|r| r.dev_bleu).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Groups sentence indices into batches of length-sorted neighbours whose
/// combined source and target length stays within `token_cap` (a single
/// over-long pair forms its own batch).
pub fn make_batches(src_lens: &[usize], tgt_lens: &[usize], token_cap: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..src_lens.len()).collect();
    order.sort_by_key(|&i| (tgt_lens[i], src_lens[i], i));
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut tokens = 0;
    for i in order {
        let n = src_lens[i] + tgt_lens[i];
        if !current.is_empty() && tokens + n > token_cap {
            batches.push(std::mem::take(&mut current));
            tokens = 0;
        }
        current.push(i);
        tokens += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: &TrainingConfig) -> Self {
        let zeros: Vec<Mat> = params.ids().map(|id| Mat::zeros(params.get(id).dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for id in params.ids().collect::<Vec<_>>() {
            let i = id.index();
            let Some(g) = &grads[i] else { continue };
            Zip::from(params.get_mut(id))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

pub fn global_norm(grads: &Grads) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grads(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

fn corpus_batches(model: &Model, corpus: &ParallelCorpus, idx: &[usize]) -> Batch {
    let src: Vec<&Tokens> = idx.iter().map(|&i| &corpus.src[i]).collect();
    let tgt: Vec<&Tokens> = idx.iter().map(|&i| &corpus.tgt[i]).collect();
    Batch {
        src: src.iter().map(|s| model.src_vocab().encode(s)).collect(),
        tgt: tgt.iter().map(|t| model.tgt_vocab().encode(t)).collect(),
    }
}

/// Word-level text for scoring: tags removed, sub-words joined.
pub fn postprocess(stream: &[String]) -> Tokens {
    bpe::undo(&annotate::strip_tags(stream))
}

/// Dev perplexity (unsmoothed, per predicted token including EOS).
pub fn perplexity(model: &Model, dev: &ParallelCorpus, token_cap: usize) -> Result<f64> {
    let lens_s: Vec<usize> = dev.src.iter().map(Vec::len).collect();
    let lens_t: Vec<usize> = dev.tgt.iter().map(Vec::len).collect();
    let mut total = 0.0;
    let mut count = 0;
    for idx in make_batches(&lens_s, &lens_t, token_cap) {
        let (nll, n) = model.nll(&corpus_batches(model, dev, &idx))?;
        total += nll;
        count += n;
    }
    Ok((total / count as f64).exp())
}

/// Corpus BLEU of decoded dev sentences after post-processing.
pub fn dev_bleu(model: &Model, dev: &ParallelCorpus, limit: usize, beam: usize) -> Result<f64> {
    let n = if limit == 0 { dev.len() } else { limit.min(dev.len()) };
    let opts = DecodeOptions {
        beam,
        ..DecodeOptions::default()
    };
    let hyps = translate_batch(model, &dev.src[..n], &opts)?;
    let hyps: Vec<Tokens> = hyps.iter().map(|t| postprocess(&t.tokens)).collect();
    let refs: Vec<Tokens> = dev.tgt[..n].iter().map(|t| postprocess(t)).collect();
    Ok(eval::bleu(&hyps, &refs)?.score)
}

fn validate(model: &Model, dev: &ParallelCorpus, cfg: &TrainingConfig, train_loss: Option<f64>) -> Result<ValidationRecord> {
    let rec = ValidationRecord {
        step: model.step,
        train_loss,
        dev_perplexity: perplexity(model, dev, cfg.token_cap)?,
        dev_bleu: dev_bleu(model, dev, cfg.valid_bleu_sentences, cfg.valid_beam)?,
    };
    log::info!(
        "step {}: train loss {:.4}, dev ppl {:.3}, dev BLEU {:.2}",
        rec.step,
        rec.train_loss.unwrap_or(f64::NAN),
        rec.dev_perplexity,
        rec.dev_bleu
    );
    Ok(rec)
}

/// Trains a model from scratch. Identical inputs and seed give bit-identical
/// weights.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainingConfig,
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::data("training and dev corpora must be non-empty"));
    }
    if !model_cfg.is_published_grid() {
        log::warn!("model sizes {:?} are outside the published grid", model_cfg.sizes);
    }
    let src_vocab = Vocabulary::build(&train.src)?;
    let tgt_vocab = Vocabulary::build(&train.tgt)?;
    let mut model = Model::new(model_cfg.clone(), src_vocab, tgt_vocab, cfg.seed)?;
    let mut adam = Adam::new(model.params(), cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let lens_s: Vec<usize> = train.src.iter().map(Vec::len).collect();
    let lens_t: Vec<usize> = train.tgt.iter().map(Vec::len).collect();
    let batches = make_batches(&lens_s, &lens_t, cfg.token_cap);

    let first = validate(&model, dev, cfg, None)?;
    let mut best_ppl = first.dev_perplexity;
    let mut best_bleu = first.dev_bleu;
    let mut best = model.clone();
    let mut log = vec![first];
    let mut bad = 0;
    let mut loss_sum = 0.0;
    let mut loss_n = 0;

    let stop = 'outer: loop {
        if bad >= cfg.patience {
            break StopReason::Patience;
        }
        let mut order: Vec<usize> = (0..batches.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for bi in order {
            if cfg.max_steps > 0 && model.step >= cfg.max_steps {
                if log.last().map(|r| r.step) != Some(model.step) {
                    let rec = validate(&model, dev, cfg, (loss_n > 0).then(|| loss_sum / loss_n as f64))?;
                    if rec.dev_bleu > best_bleu {
                        best = model.clone();
                    }
                    log.push(rec);
                }
                break 'outer StopReason::MaxSteps;
            }
            let batch = corpus_batches(&model, train, &batches[bi]);
            let (loss, mut grads) = model.loss_and_grads_train(&batch, &mut dropout_rng)?;
            model.step += 1;
            let norm = clip_grads(&mut grads, cfg.clip_norm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::Diverged {
                    step: model.step,
                    loss,
                });
            }
            let lr = lr_at(model.step, cfg);
            adam.step(model.params_mut(), &grads, lr);
            loss_sum += loss;
            loss_n += 1;

            if model.step % cfg.validate_every == 0 {
                let rec = validate(&model, dev, cfg, Some(loss_sum / loss_n as f64))?;
                loss_sum = 0.0;
                loss_n = 0;
                if rec.dev_perplexity < best_ppl {
                    best_ppl = rec.dev_perplexity;
                    bad = 0;
                } else {
                    bad += 1;
                }
                if rec.dev_bleu > best_bleu {
                    best_bleu = rec.dev_bleu;
                    best = model.clone();
                }
                log.push(rec);
                if bad >= cfg.patience {
                    break 'outer StopReason::Patience;
                }
            }
        }
    };
    Ok(TrainOutcome {
        steps: model.step,
        model: best,
        log,
        stop,
    })
}
