//! Loading the train/dev/test splits of an experiment.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use tagmt::annotate::synth::{lemmatize_target, synth_corpus};
use tagmt::annotate::{match_annotations, parse_conllu, AnnotatedSentence, AnnotatedToken, Feats, Upos};
use tagmt::textproc::{downsample, filter_pairs, read_parallel, truecase, SentencePair, TruecaseModel};
use tagmt::Tokens;

use crate::config::{CorpusSource, ExperimentConfig, SplitPaths};
use crate::error::{CliError, CliResult};
use crate::fsio;

/// One sentence pair with optional word-level annotations whose forms equal
/// the tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub src: Tokens,
    pub tgt: Tokens,
    pub src_ann: Option<AnnotatedSentence>,
    pub tgt_ann: Option<AnnotatedSentence>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    /// Annotates decoded target words when the corpus has no built-in analyser.
    pub lexicon: Option<LemmaLexicon>,
}

impl Splits {
    pub fn named(&self) -> [(&'static str, &[Example]); 3] {
        [("train", &self.train), ("dev", &self.dev), ("test", &self.test)]
    }

    /// Lemmas and tags for decoded target words.
    pub fn annotate_hypothesis(&self, words: &[String]) -> Vec<AnnotatedToken> {
        match &self.lexicon {
            None => lemmatize_target(words),
            Some(lex) => lex.annotate(words),
        }
    }
}

/// Form → most frequent (lemma, UPOS, features) analysis in the training
/// annotations. Unknown forms become `X` with the form as lemma.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LemmaLexicon {
    entries: HashMap<String, AnnotatedToken>,
}

impl LemmaLexicon {
    pub fn learn<'a, I: IntoIterator<Item = &'a AnnotatedSentence>>(sentences: I) -> Self {
        type Key = (String, String, String);
        let mut counts: HashMap<&str, BTreeMap<Key, (usize, &AnnotatedToken)>> = HashMap::new();
        for s in sentences {
            for t in &s.tokens {
                if t.lemma.is_empty() {
                    continue;
                }
                let key = (t.lemma.clone(), t.upos.to_string(), t.feats.to_string());
                counts.entry(&t.form).or_default().entry(key).or_insert((0, t)).0 += 1;
            }
        }
        let entries = counts
            .into_iter()
            .map(|(form, analyses)| {
                // highest count; map order breaks ties towards the smallest analysis
                let mut best: Option<(usize, &AnnotatedToken)> = None;
                for &(c, t) in analyses.values() {
                    if best.map_or(true, |(bc, _)| c > bc) {
                        best = Some((c, t));
                    }
                }
                let (_, t) = best.expect("at least one analysis");
                (form.to_string(), t.clone())
            })
            .collect();
        Self { entries }
    }

    pub fn annotate(&self, words: &[String]) -> Vec<AnnotatedToken> {
        words
            .iter()
            .map(|w| {
                self.entries
                    .get(w)
                    .cloned()
                    .unwrap_or_else(|| AnnotatedToken::new(w, w, Upos::X, Feats::new()))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_splits(cfg: &ExperimentConfig) -> CliResult<Splits> {
    let mut splits = match &cfg.corpus {
        CorpusSource::Synthetic { train, dev, test } => synthetic_splits(cfg, *train, *dev, *test)?,
        CorpusSource::Files {
            train,
            dev,
            test,
            pretokenized,
        } => file_splits(cfg, train, dev, test, *pretokenized)?,
    };
    if cfg.train_size > 0 {
        if cfg.train_size > splits.train.len() {
            return Err(CliError::Config(format!(
                "data.train_size {} exceeds the {} training pairs left after filtering",
                cfg.train_size,
                splits.train.len()
            )));
        }
        let pairs = as_pairs(&splits.train);
        let keep = downsample(&pairs, cfg.train_size, cfg.seed)?;
        splits.train = keep.iter().map(|p| splits.train[p.id].clone()).collect();
    }
    for (name, part) in splits.named() {
        if part.is_empty() {
            return Err(CliError::Core(tagmt::Error::Data(format!("the {name} split is empty"))));
        }
    }
    Ok(splits)
}

fn as_pairs(examples: &[Example]) -> Vec<SentencePair> {
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| SentencePair::new(i, e.src.clone(), e.tgt.clone()))
        .collect()
}

fn synthetic_splits(cfg: &ExperimentConfig, train: usize, dev: usize, test: usize) -> CliResult<Splits> {
    let all = synth_corpus(cfg.seed, train + dev + test);
    let mut examples: Vec<Example> = all
        .into_iter()
        .map(|ex| Example {
            src: ex.pair.src,
            tgt: ex.pair.tgt,
            src_ann: Some(ex.src),
            tgt_ann: Some(ex.tgt),
        })
        .collect();
    let test_part = examples.split_off(train + dev);
    let dev_part = examples.split_off(train);
    let keep = |v: Vec<Example>| -> Vec<Example> {
        let pairs = filter_pairs(as_pairs(&v), cfg.max_len);
        pairs.iter().map(|p| v[p.id].clone()).collect()
    };
    Ok(Splits {
        train: keep(examples),
        dev: keep(dev_part),
        test: keep(test_part),
        lexicon: None,
    })
}

fn read_annotations(path: &Option<std::path::PathBuf>, tokens: &[Tokens], side: &str) -> CliResult<Option<Vec<Option<AnnotatedSentence>>>> {
    let Some(path) = path else { return Ok(None) };
    let parsed = parse_conllu(&fsio::read_text(path)?).map_err(|e| in_file(path, e))?;
    let (matched, rejected) = match_annotations(tokens, parsed).map_err(|e| in_file(path, e))?;
    if rejected > 0 {
        log::warn!(
            "{}: {rejected} {side} sentences do not match their annotation and are dropped",
            path.display()
        );
    }
    Ok(Some(matched))
}

fn in_file(path: &Path, e: tagmt::Error) -> CliError {
    CliError::Core(tagmt::Error::Data(format!("{}: {e}", path.display())))
}

struct RawSplit {
    pairs: Vec<SentencePair>,
    src_ann: Option<Vec<Option<AnnotatedSentence>>>,
    tgt_ann: Option<Vec<Option<AnnotatedSentence>>>,
}

fn read_split(paths: &SplitPaths, pretokenized: bool) -> CliResult<RawSplit> {
    let pairs = read_parallel(fsio::open_reader(&paths.src)?, fsio::open_reader(&paths.tgt)?, pretokenized)
        .map_err(|e| in_file(&paths.src, e))?;
    let src: Vec<Tokens> = pairs.iter().map(|p| p.src.clone()).collect();
    let tgt: Vec<Tokens> = pairs.iter().map(|p| p.tgt.clone()).collect();
    Ok(RawSplit {
        src_ann: read_annotations(&paths.src_conllu, &src, "source")?,
        tgt_ann: read_annotations(&paths.tgt_conllu, &tgt, "target")?,
        pairs,
    })
}

/// Truecases the tokens and keeps the annotation forms in step.
fn recase(model: &TruecaseModel, toks: &[String], ann: Option<AnnotatedSentence>) -> (Tokens, Option<AnnotatedSentence>) {
    let cased = truecase(model, toks);
    let ann = ann.map(|mut a| {
        for (t, c) in a.tokens.iter_mut().zip(&cased) {
            t.form = c.clone();
        }
        a
    });
    (cased, ann)
}

fn file_splits(
    cfg: &ExperimentConfig,
    train: &SplitPaths,
    dev: &SplitPaths,
    test: &SplitPaths,
    pretokenized: bool,
) -> CliResult<Splits> {
    let raw = [read_split(train, pretokenized)?, read_split(dev, pretokenized)?, read_split(test, pretokenized)?];
    let src_tc = TruecaseModel::learn(raw[0].pairs.iter().map(|p| &p.src));
    let tgt_tc = TruecaseModel::learn(raw[0].pairs.iter().map(|p| &p.tgt));

    let mut parts: Vec<Vec<Example>> = Vec::new();
    for split in raw {
        let kept = filter_pairs(split.pairs, cfg.max_len);
        let mut out = Vec::with_capacity(kept.len());
        for p in kept {
            let pick = |a: &Option<Vec<Option<AnnotatedSentence>>>| a.as_ref().map(|v| v[p.id].clone());
            let (sa, ta) = (pick(&split.src_ann), pick(&split.tgt_ann));
            // a side with an annotation file drops sentences it could not annotate
            if matches!(sa, Some(None)) || matches!(ta, Some(None)) {
                continue;
            }
            let (src, src_ann) = recase(&src_tc, &p.src, sa.flatten());
            let (tgt, tgt_ann) = recase(&tgt_tc, &p.tgt, ta.flatten());
            out.push(Example { src, tgt, src_ann, tgt_ann });
        }
        parts.push(out);
    }
    let test_part = parts.pop().expect("three splits");
    let dev_part = parts.pop().expect("three splits");
    let train_part = parts.pop().expect("three splits");
    let lexicon = LemmaLexicon::learn(train_part.iter().filter_map(|e| e.tgt_ann.as_ref()));
    Ok(Splits {
        train: train_part,
        dev: dev_part,
        test: test_part,
        lexicon: Some(lexicon),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_prefers_frequent_analysis() {
        let s = |lemma: &str| {
            AnnotatedSentence::new(vec![AnnotatedToken::new("saw", lemma, Upos::VERB, Feats::new())])
        };
        let lex = LemmaLexicon::learn(&[s("see"), s("saw"), s("see")]);
        let out = lex.annotate(&["saw".to_string(), "zzz".to_string()]);
        assert_eq!(out[0].lemma, "see");
        assert_eq!(out[1].lemma, "zzz");
        assert_eq!(out[1].upos, Upos::X);
    }

    #[test]
    fn synthetic_splits_have_requested_sizes() {
        let mut cfg = ExperimentConfig::synthetic_default();
        cfg.corpus = CorpusSource::Synthetic { train: 30, dev: 5, test: 7 };
        let s = load_splits(&cfg).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (30, 5, 7));
        assert!(s.test.iter().all(|e| e.tgt_ann.as_ref().unwrap().forms() == e.tgt));
        cfg.train_size = 10;
        assert_eq!(load_splits(&cfg).unwrap().train.len(), 10);
        cfg.train_size = 31;
        assert!(load_splits(&cfg).is_err());
    }
}
