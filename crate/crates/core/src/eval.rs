//! Corpus BLEU, paired bootstrap resampling and tag/word prediction accuracy.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annotate::{is_tag, tag_pos};
use crate::bpe;
use crate::{Error, Result, Tokens};

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram statistics of one sentence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SentenceStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl std::ops::AddAssign for SentenceStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn sentence_stats(hyp: &[String], reference: &[String]) -> SentenceStats {
    let mut s = SentenceStats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        s.matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuReport {
    /// BLEU on a 0–100 scale.
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

pub fn bleu_from_stats(s: &SentenceStats) -> BleuReport {
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if s.totals[n] == 0 {
            0.0
        } else {
            s.matches[n] as f64 / s.totals[n] as f64
        };
    }
    let brevity_penalty = if s.hyp_len == 0 {
        0.0
    } else if s.hyp_len < s.ref_len {
        (1.0 - s.ref_len as f64 / s.hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len: s.hyp_len,
        ref_len: s.ref_len,
    }
}

fn check_parallel(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::argument(format!(
            "{hyps} hypotheses but {refs} references"
        )));
    }
    if hyps == 0 {
        return Err(Error::data("cannot score an empty corpus"));
    }
    Ok(())
}

/// Corpus-level BLEU-4 with one reference per sentence.
pub fn bleu<S: AsRef<[String]>>(hyps: &[S], refs: &[S]) -> Result<BleuReport> {
    check_parallel(hyps.len(), refs.len())?;
    let mut total = SentenceStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += sentence_stats(h.as_ref(), r.as_ref());
    }
    Ok(bleu_from_stats(&total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub bleu_a: f64,
    pub bleu_b: f64,
    pub iterations: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// A is better than B at the requested level.
    pub a_better: bool,
    pub b_better: bool,
}

/// Paired bootstrap resampling: `iterations` resamples of the test set with
/// replacement; system A is significantly better when it wins (ties split
/// evenly) in at least a `1 − alpha` fraction of them.
pub fn paired_bootstrap<S: AsRef<[String]> + Sync>(
    sys_a: &[S],
    sys_b: &[S],
    refs: &[S],
    iterations: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    check_parallel(sys_a.len(), refs.len())?;
    check_parallel(sys_b.len(), refs.len())?;
    if iterations == 0 {
        return Err(Error::argument("bootstrap needs at least one iteration"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::argument(format!("significance level {alpha} outside (0, 1)")));
    }
    let stats = |sys: &[S]| -> Vec<SentenceStats> {
        sys.iter()
            .zip(refs)
            .map(|(h, r)| sentence_stats(h.as_ref(), r.as_ref()))
            .collect()
    };
    let (sa, sb) = (stats(sys_a), stats(sys_b));
    let total = |s: &[SentenceStats]| {
        let mut t = SentenceStats::default();
        s.iter().for_each(|x| t += *x);
        bleu_from_stats(&t).score
    };
    let n = refs.len();
    let outcomes: Vec<std::cmp::Ordering> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (mut ta, mut tb) = (SentenceStats::default(), SentenceStats::default());
            for _ in 0..n {
                let j = rng.gen_range(0..n);
                ta += sa[j];
                tb += sb[j];
            }
            bleu_from_stats(&ta).score.total_cmp(&bleu_from_stats(&tb).score)
        })
        .collect();
    let wins_a = outcomes.iter().filter(|o| o.is_gt()).count();
    let wins_b = outcomes.iter().filter(|o| o.is_lt()).count();
    let ties = iterations - wins_a - wins_b;
    let frac = |w: usize| (w as f64 + ties as f64 / 2.0) / iterations as f64;
    Ok(BootstrapResult {
        bleu_a: total(&sa),
        bleu_b: total(&sb),
        iterations,
        wins_a,
        wins_b,
        ties,
        a_better: frac(wins_a) >= 1.0 - alpha,
        b_better: frac(wins_b) >= 1.0 - alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccuracyTarget {
    Tags,
    Pos,
    SurfaceForms,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bucket {
    pub correct: usize,
    pub total: usize,
}

impl Bucket {
    /// `None` for an empty bucket.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }
}

/// Training frequencies of at most this many count as infrequent.
pub const INFREQUENT_MAX: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccuracyReport {
    pub overall: Bucket,
    /// Reference words seen 1–10 times in training.
    pub infrequent: Bucket,
    /// Reference words never seen in training.
    pub oov: Bucket,
}

/// One output word with the tag that precedes it (if any).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedWord {
    pub tag: Option<String>,
    pub word: String,
}

/// Splits an interleaved sub-word stream into words, joining sub-words.
pub fn tagged_words(stream: &[String]) -> Vec<TaggedWord> {
    let mut out = Vec::new();
    let mut tag = None;
    let mut units: Vec<String> = Vec::new();
    for tok in stream {
        if is_tag(tok) {
            if !units.is_empty() {
                out.push(TaggedWord {
                    tag: tag.take(),
                    word: bpe::undo(&units).concat(),
                });
                units.clear();
            }
            tag = Some(tok.clone());
        } else {
            units.push(tok.clone());
            if !tok.ends_with(bpe::MARKER) {
                out.push(TaggedWord {
                    tag: tag.take(),
                    word: bpe::undo(&units).concat(),
                });
                units.clear();
            }
        }
    }
    if !units.is_empty() {
        out.push(TaggedWord {
            tag: tag.take(),
            word: bpe::undo(&units).concat(),
        });
    }
    out
}

/// Position-wise accuracy of decoded streams against reference streams, with
/// frequency buckets keyed on the reference word's training frequency when
/// `train_freq` is given. Both sides must have the same number of words.
pub fn prediction_accuracy(
    decoded: &[Tokens],
    reference: &[Tokens],
    target: AccuracyTarget,
    train_freq: Option<&HashMap<String, usize>>,
) -> Result<AccuracyReport> {
    check_parallel(decoded.len(), reference.len())?;
    let mut rep = AccuracyReport::default();
    for (i, (d, r)) in decoded.iter().zip(reference).enumerate() {
        let (dw, rw) = (tagged_words(d), tagged_words(r));
        if dw.len() != rw.len() {
            return Err(Error::Sentence {
                index: i,
                source: Box::new(Error::data(format!(
                    "decoded output has {} words, reference has {}",
                    dw.len(),
                    rw.len()
                ))),
            });
        }
        for (a, b) in dw.iter().zip(&rw) {
            let ok = match target {
                AccuracyTarget::Tags => a.tag.is_some() && a.tag == b.tag,
                AccuracyTarget::Pos => {
                    let p = |t: &Option<String>| t.as_deref().and_then(tag_pos).map(str::to_string);
                    p(&a.tag).is_some() && p(&a.tag) == p(&b.tag)
                }
                AccuracyTarget::SurfaceForms => a.word == b.word,
            };
            rep.overall.add(ok);
            if let Some(freq) = train_freq {
                match freq.get(&b.word).copied().unwrap_or(0) {
                    0 => rep.oov.add(ok),
                    f if f <= INFREQUENT_MAX => rep.infrequent.add(ok),
                    _ => {}
                }
            }
        }
    }
    Ok(rep)
}

/// Word frequencies of post-processed (tag-free, joined) sentences.
pub fn word_frequencies<S: AsRef<[String]>>(corpus: &[S]) -> HashMap<String, usize> {
    let mut freq = HashMap::new();
    for s in corpus {
        for w in tagged_words(s.as_ref()) {
            *freq.entry(w.word).or_insert(0) += 1;
        }
    }
    freq
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tokens {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn zero_precision_gives_zero() {
        let r = bleu(&[t("the the the cat")], &[t("the cat sat down")]).unwrap();
        assert_eq!(r.precisions[0], 0.5);
        assert!((r.precisions[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.precisions[2], 0.0);
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn identical_is_hundred() {
        let s = t("a b c d e");
        assert!((bleu(&[s.clone()], &[s]).unwrap().score - 100.0).abs() < 1e-9);
    }

    #[test]
    fn corpus_without_four_grams_scores_zero() {
        let short = [t("a"), t("b c d")];
        assert_eq!(bleu(&short, &short).unwrap().score, 0.0);
    }

    #[test]
    fn bad_inputs() {
        assert!(bleu::<Tokens>(&[], &[]).is_err());
        assert!(bleu(&[t("a")], &[t("a"), t("b")]).is_err());
    }

    #[test]
    fn tagged_word_split() {
        let w = tagged_words(&t("NOUN_Case=Nom ko@@ pa VERB__ nak@@ ot ."));
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].word, "kopa");
        assert_eq!(w[1].tag.as_deref(), Some("VERB__"));
        assert_eq!(w[2].tag, None);
    }

    #[test]
    fn accuracy_and_buckets() {
        let freq: HashMap<String, usize> = [("kopa".to_string(), 3), ("nakot".to_string(), 50)].into();
        let d = vec![t("NOUN_Case=Nom kopa VERB_Tense=Past nakot NOUN_Case=Acc miru")];
        let r = vec![t("NOUN_Case=Nom kopa VERB_Tense=Pres nakot NOUN_Case=Acc miru")];
        let rep = prediction_accuracy(&d, &r, AccuracyTarget::Tags, Some(&freq)).unwrap();
        assert_eq!(rep.overall, Bucket { correct: 2, total: 3 });
        assert_eq!(rep.infrequent, Bucket { correct: 1, total: 1 });
        assert_eq!(rep.oov, Bucket { correct: 1, total: 1 });
        let pos = prediction_accuracy(&d, &r, AccuracyTarget::Pos, None).unwrap();
        assert_eq!(pos.overall.correct, 3);
        let short = vec![t("NOUN_Case=Nom kopa")];
        assert!(prediction_accuracy(&short, &r, AccuracyTarget::SurfaceForms, None).is_err());
    }
}
