//! Minimal CoNLL-U reader: FORM, LEMMA, UPOS and FEATS of basic word lines.

use super::{AnnotatedSentence, AnnotatedToken, Feats, Upos};
use crate::{Error, Result, Tokens};

const COLUMNS: usize = 10;

/// Parses CoNLL-U blocks into sentences. Multiword range lines (`3-4`) and empty
/// nodes (`5.1`) are skipped; word ids must run 1, 2, … within each sentence.
pub fn parse_conllu(text: &str) -> Result<Vec<AnnotatedSentence>> {
    let mut sentences = Vec::new();
    let mut current: Vec<AnnotatedToken> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(AnnotatedSentence::new(std::mem::take(&mut current)));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| Error::Parse { line: lineno, msg };
        if cols.len() != COLUMNS {
            return Err(err(format!(
                "expected {COLUMNS} tab-separated columns, found {}",
                cols.len()
            )));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id
            .parse()
            .map_err(|_| err(format!("invalid token id {id:?}")))?;
        if id != current.len() + 1 {
            return Err(err(format!(
                "non-contiguous token id {id}, expected {}",
                current.len() + 1
            )));
        }
        let form = cols[1];
        if form.is_empty() {
            return Err(err("empty FORM".into()));
        }
        // `_` marks an unspecified lemma unless the word itself is an underscore
        let lemma = if cols[2] == "_" && form != "_" {
            ""
        } else {
            cols[2]
        };
        let upos: Upos = cols[3].parse().map_err(|e| err(format!("{e}")))?;
        let feats = Feats::parse(cols[5]).map_err(err)?;
        current.push(AnnotatedToken::new(form, lemma, upos, feats));
    }
    if !current.is_empty() {
        sentences.push(AnnotatedSentence::new(current));
    }
    Ok(sentences)
}

/// Writes sentences as CoNLL-U with FORM, LEMMA, UPOS and FEATS filled in; the
/// remaining columns are `_`. Empty lemmas are written as `_`.
pub fn write_conllu(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for sent in sentences {
        for (i, t) in sent.tokens.iter().enumerate() {
            let lemma = if t.lemma.is_empty() { "_" } else { &t.lemma };
            out.push_str(&format!("{}\t{}\t{}\t{}\t_\t{}\t_\t_\t_\t_\n", i + 1, t.form, lemma, t.upos, t.feats));
        }
        out.push('\n');
    }
    out
}

/// Pairs tokenized sentences with annotations whose word forms match them one to
/// one. Mismatched sentences yield `None` and are counted.
pub fn match_annotations(
    tokens: &[Tokens],
    annotations: Vec<AnnotatedSentence>,
) -> Result<(Vec<Option<AnnotatedSentence>>, usize)> {
    if tokens.len() != annotations.len() {
        return Err(Error::data(format!(
            "{} sentences but {} annotated sentences",
            tokens.len(),
            annotations.len()
        )));
    }
    let mut rejected = 0;
    let out = tokens
        .iter()
        .zip(annotations)
        .map(|(toks, ann)| {
            let same = ann.len() == toks.len()
                && ann.tokens.iter().zip(toks).all(|(a, t)| &a.form == t);
            if same {
                Some(ann)
            } else {
                rejected += 1;
                None
            }
        })
        .collect();
    Ok((out, rejected))
}
