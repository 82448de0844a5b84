//! Beam search, with an optional tag/word alternation mask for tag-trained
//! models and the constrained modes used by the diagnostics.

use std::io::Write;

use rayon::prelude::*;

use crate::annotate::{is_tag, tag_pos};
use crate::bpe::MARKER;
use crate::nmt::vocab::{BOS, EOS, PAD};
use crate::nmt::{Encoded, Model};
use crate::{Error, Result, Tokens};

/// Anything that scores the next symbol given a target prefix.
pub trait StepScorer {
    fn eos(&self) -> usize;

    /// Log-probabilities over the whole vocabulary, one vector per prefix.
    fn next_logprobs(&self, prefixes: &[Vec<usize>]) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted symbols, EOS excluded.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    /// False if the length limit was hit before EOS.
    pub finished: bool,
}

impl Hypothesis {
    /// Number of scored symbols, counting EOS.
    pub fn length(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    pub fn normalized(&self, alpha: f64) -> f64 {
        self.logprob / (self.length().max(1) as f64).powf(alpha)
    }
}

/// Beam search over `scorer`. `allowed` lists the symbols that may follow a
/// prefix. Each step keeps the best `beam` expansions of the live hypotheses;
/// those ending in EOS are finished and the rest stay live. Search ends when
/// no live hypothesis is left or at `max_len`, where the live ones compete
/// unfinished. The final choice maximises the length-normalised score (ties go
/// to the earlier candidate). Returns `None` if every hypothesis was pruned by
/// `allowed`.
pub fn beam_search<S, F>(scorer: &S, beam: usize, max_len: usize, alpha: f64, allowed: F) -> Option<Hypothesis>
where
    S: StepScorer + ?Sized,
    F: Fn(&[usize]) -> Vec<usize>,
{
    assert!(beam > 0, "beam must be positive");
    let eos = scorer.eos();
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<usize>> = live.iter().map(|h| h.tokens.clone()).collect();
        let lps = scorer.next_logprobs(&prefixes);
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            for s in allowed(&hyp.tokens) {
                let lp = lps[h][s];
                if lp.is_finite() {
                    cands.push((hyp.logprob + lp, h, s));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam);
        let mut next = Vec::with_capacity(cands.len());
        for (score, h, s) in cands {
            let mut tokens = live[h].tokens.clone();
            if s == eos {
                finished.push(Hypothesis {
                    tokens,
                    logprob: score,
                    finished: true,
                });
            } else {
                tokens.push(s);
                next.push(Hypothesis {
                    tokens,
                    logprob: score,
                    finished: false,
                });
            }
        }
        live = next;
    }
    finished.extend(live);
    let mut best: Option<Hypothesis> = None;
    for h in finished {
        if best.as_ref().is_none_or(|b| h.normalized(alpha) > b.normalized(alpha)) {
            best = Some(h);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolClass {
    Tag,
    /// Sub-word unit that continues into the next one (`…@@`).
    WordCont,
    /// Last (or only) unit of a word.
    WordEnd,
    Eos,
    /// Padding and BOS: never emitted.
    Control,
}

impl SymbolClass {
    fn group(self) -> u8 {
        match self {
            SymbolClass::Tag => 0,
            SymbolClass::WordCont | SymbolClass::WordEnd => 1,
            SymbolClass::Eos => 2,
            SymbolClass::Control => 3,
        }
    }
}

/// Class of every symbol of a target vocabulary.
#[derive(Debug, Clone)]
pub struct ClassTable {
    classes: Vec<SymbolClass>,
    tags: Vec<usize>,
    words: Vec<usize>,
    emittable: Vec<usize>,
}

impl ClassTable {
    pub fn new(model: &Model) -> Self {
        let v = model.tgt_vocab();
        let classes: Vec<SymbolClass> = (0..v.len())
            .map(|i| match i {
                EOS => SymbolClass::Eos,
                PAD | BOS => SymbolClass::Control,
                _ if is_tag(v.symbol(i)) => SymbolClass::Tag,
                _ if v.symbol(i).ends_with(MARKER) => SymbolClass::WordCont,
                _ => SymbolClass::WordEnd,
            })
            .collect();
        let pick = |f: &dyn Fn(SymbolClass) -> bool| -> Vec<usize> {
            (0..classes.len()).filter(|&i| f(classes[i])).collect()
        };
        Self {
            tags: pick(&|c| c == SymbolClass::Tag),
            words: pick(&|c| matches!(c, SymbolClass::WordCont | SymbolClass::WordEnd)),
            emittable: pick(&|c| c != SymbolClass::Control),
            classes,
        }
    }

    pub fn class(&self, id: usize) -> SymbolClass {
        self.classes[id]
    }

    pub fn has_tags(&self) -> bool {
        !self.tags.is_empty()
    }
}

/// Restrictions applied during decoding. Reference sequences are per sentence.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeConstraint {
    Free,
    /// The k-th tag position must produce the k-th reference tag.
    ForceTags(Tokens),
    /// Word positions must reproduce this reference sub-word sequence; tag
    /// positions are free.
    ForceWords(Tokens),
    /// The k-th tag must be an MSD tag whose POS equals the k-th entry.
    RestrictPos(Tokens),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Defaults to twice the source length plus 10.
    pub max_len: Option<usize>,
    pub length_alpha: f64,
    /// Enforce tag/word alternation when the model emits tags.
    pub class_mask: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            beam: 5,
            max_len: None,
            length_alpha: 1.0,
            class_mask: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub tokens: Tokens,
    /// Total log-probability of the output including EOS.
    pub logprob: f64,
    pub length: usize,
}

struct ModelScorer<'a> {
    model: &'a Model,
    enc: Encoded,
}

impl StepScorer for ModelScorer<'_> {
    fn eos(&self) -> usize {
        EOS
    }

    fn next_logprobs(&self, prefixes: &[Vec<usize>]) -> Vec<Vec<f64>> {
        self.model
            .next_logprobs(&self.enc, prefixes)
            .outer_iter()
            .map(|r| r.to_vec())
            .collect()
    }
}

/// Constraint resolved to vocabulary indices.
enum Plan {
    Unmasked,
    Free,
    /// Allowed tag set for each tag position.
    Tags(Vec<Vec<usize>>),
    /// Reference words as unit indices.
    Words(Vec<Vec<usize>>),
}

fn group_words(units: &[String]) -> Result<Vec<Vec<String>>> {
    let mut words = Vec::new();
    let mut cur = Vec::new();
    for u in units {
        if is_tag(u) {
            return Err(Error::data(format!("tag {u} inside a forced word sequence")));
        }
        cur.push(u.clone());
        if !u.ends_with(MARKER) {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        return Err(Error::data("forced word sequence ends inside a word"));
    }
    Ok(words)
}

fn plan(model: &Model, table: &ClassTable, c: &DecodeConstraint, opts: &DecodeOptions, max_len: usize) -> Result<Plan> {
    let v = model.tgt_vocab();
    if matches!(c, DecodeConstraint::Free) {
        return Ok(if opts.class_mask && table.has_tags() {
            Plan::Free
        } else {
            Plan::Unmasked
        });
    }
    if !table.has_tags() {
        return Err(Error::config("constrained decoding needs a model trained with target tags"));
    }
    let (reference, min_len) = match c {
        DecodeConstraint::ForceTags(r) | DecodeConstraint::RestrictPos(r) => (r, 2 * r.len() + 1),
        DecodeConstraint::ForceWords(r) => (r, 0),
        DecodeConstraint::Free => unreachable!(),
    };
    if reference.is_empty() {
        return Err(Error::data("empty reference for constrained decoding"));
    }
    let p = match c {
        DecodeConstraint::ForceTags(r) => Plan::Tags(
            r.iter()
                .map(|t| {
                    v.get(t)
                        .filter(|&i| table.class(i) == SymbolClass::Tag)
                        .map(|i| vec![i])
                        .ok_or_else(|| Error::data(format!("reference tag {t} is not in the model vocabulary")))
                })
                .collect::<Result<_>>()?,
        ),
        DecodeConstraint::RestrictPos(r) => Plan::Tags(
            r.iter()
                .map(|pos| {
                    let set: Vec<usize> = table
                        .tags
                        .iter()
                        .copied()
                        .filter(|&i| {
                            let s = v.symbol(i);
                            crate::annotate::tag_kind_of(s) == Some(crate::annotate::TagKind::Msd)
                                && tag_pos(s) == Some(pos.as_str())
                        })
                        .collect();
                    if set.is_empty() {
                        Err(Error::data(format!("no MSD tag in the vocabulary has POS {pos}")))
                    } else {
                        Ok(set)
                    }
                })
                .collect::<Result<_>>()?,
        ),
        DecodeConstraint::ForceWords(r) => {
            let words = group_words(r)?;
            let ids: Vec<Vec<usize>> = words.iter().map(|w| w.iter().map(|u| v.id(u)).collect()).collect();
            let needed = words.len() + r.len() + 1;
            if needed > max_len {
                return Err(Error::data(format!("forced length {needed} exceeds max length {max_len}")));
            }
            Plan::Words(ids)
        }
        DecodeConstraint::Free => unreachable!(),
    };
    if min_len > max_len {
        return Err(Error::data(format!("forced length {min_len} exceeds max length {max_len}")));
    }
    Ok(p)
}

fn allowed(table: &ClassTable, plan: &Plan, prefix: &[usize], max_len: usize) -> Vec<usize> {
    if let Plan::Unmasked = plan {
        return table.emittable.clone();
    }
    let mut words_started = 0;
    let mut unit = 0;
    let mut in_word = false;
    for &s in prefix {
        match table.class(s) {
            SymbolClass::Tag => {
                words_started += 1;
                unit = 0;
                in_word = true;
            }
            SymbolClass::WordCont => {
                unit += 1;
                in_word = true;
            }
            SymbolClass::WordEnd => {
                unit += 1;
                in_word = false;
            }
            _ => {}
        }
    }
    match plan {
        Plan::Unmasked => unreachable!(),
        Plan::Free if in_word => table.words.clone(),
        Plan::Free => {
            let mut a = table.tags.clone();
            a.push(EOS);
            a
        }
        Plan::Tags(sets) if in_word => {
            // keep room for the remaining tag/word pairs and EOS
            let left = max_len.saturating_sub(prefix.len() + 1);
            let needed = 2 * (sets.len() - words_started.min(sets.len())) + 1;
            table
                .words
                .iter()
                .copied()
                .filter(|&u| table.class(u) == SymbolClass::WordEnd || left > needed)
                .collect()
        }
        Plan::Tags(sets) => sets.get(words_started).cloned().unwrap_or_else(|| vec![EOS]),
        Plan::Words(words) if in_word => words[words_started - 1].get(unit).map(|&u| vec![u]).unwrap_or_default(),
        Plan::Words(words) if words_started < words.len() => table.tags.clone(),
        Plan::Words(_) => vec![EOS],
    }
}

pub fn default_max_len(src_len: usize) -> usize {
    2 * src_len + 10
}

fn translate_with(
    model: &Model,
    table: &ClassTable,
    src: &[String],
    opts: &DecodeOptions,
    constraint: &DecodeConstraint,
) -> Result<Translation> {
    if opts.beam == 0 {
        return Err(Error::argument("beam size must be positive"));
    }
    let max_len = opts.max_len.unwrap_or_else(|| default_max_len(src.len()));
    let plan = plan(model, table, constraint, opts, max_len)?;
    let scorer = ModelScorer {
        model,
        enc: model.encode(src),
    };
    let best = beam_search(&scorer, opts.beam, max_len, opts.length_alpha, |p| allowed(table, &plan, p, max_len))
        .ok_or_else(|| Error::data("no hypothesis satisfies the decoding constraint"))?;
    Ok(Translation {
        tokens: model.tgt_vocab().decode(&best.tokens),
        logprob: best.logprob,
        length: best.length(),
    })
}

pub fn translate(model: &Model, src: &[String], opts: &DecodeOptions, constraint: &DecodeConstraint) -> Result<Translation> {
    translate_with(model, &ClassTable::new(model), src, opts, constraint)
}

/// Decodes sentences in parallel; output order matches input order.
pub fn translate_batch(model: &Model, srcs: &[Tokens], opts: &DecodeOptions) -> Result<Vec<Translation>> {
    let table = ClassTable::new(model);
    srcs.par_iter()
        .enumerate()
        .map(|(i, s)| {
            translate_with(model, &table, s, opts, &DecodeConstraint::Free).map_err(|e| Error::Sentence {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn translate_batch_constrained(
    model: &Model,
    srcs: &[Tokens],
    opts: &DecodeOptions,
    constraints: &[DecodeConstraint],
) -> Result<Vec<Translation>> {
    if srcs.len() != constraints.len() {
        return Err(Error::argument("one constraint per source sentence is required"));
    }
    let table = ClassTable::new(model);
    srcs.par_iter()
        .zip(constraints)
        .enumerate()
        .map(|(i, (s, c))| {
            translate_with(model, &table, s, opts, c).map_err(|e| Error::Sentence {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Greedy masked decoding that records, at every step, whether the unmasked
/// argmax has the same class (tag, word unit or EOS) as the masked choice.
/// Returns `(agreeing steps, total steps)`.
pub fn alternation_agreement(model: &Model, src: &[String], max_len: Option<usize>) -> Result<(usize, usize)> {
    let table = ClassTable::new(model);
    if !table.has_tags() {
        return Err(Error::config("alternation check needs a model trained with target tags"));
    }
    let max_len = max_len.unwrap_or_else(|| default_max_len(src.len()));
    let enc = model.encode(src);
    let mut prefix = Vec::new();
    let (mut agree, mut total) = (0, 0);
    for _ in 0..max_len {
        let lp = model.next_logprobs(&enc, std::slice::from_ref(&prefix));
        let row = lp.row(0);
        let argmax = |cands: &[usize]| {
            cands
                .iter()
                .copied()
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if row[b] >= row[i] => Some(b),
                    _ => Some(i),
                })
                .expect("non-empty candidate set")
        };
        let free = argmax(&table.emittable);
        let masked = argmax(&allowed(&table, &Plan::Free, &prefix, max_len));
        total += 1;
        if table.class(free).group() == table.class(masked).group() {
            agree += 1;
        }
        if masked == EOS {
            break;
        }
        prefix.push(masked);
    }
    Ok((agree, total))
}

/// Writes `id<TAB>logprob<TAB>length` lines (ids from 0).
pub fn write_scores<W: Write>(mut w: W, translations: &[Translation]) -> Result<()> {
    for (i, t) in translations.iter().enumerate() {
        writeln!(w, "{i}\t{}\t{}", t.logprob, t.length)?;
    }
    Ok(())
}
