//! Word-level error classification over surface forms and lemmas (inflection,
//! reordering, missing, extra, lexical choice).
//!
//! Each sentence pair is aligned with a minimal word edit script. Among equally
//! cheap scripts the lexicographically smallest one is taken, ordering diagonal
//! steps (match or substitution) before deletions (reference word dropped)
//! before insertions (hypothesis word added). Every edit operation then
//! receives exactly one category.

use std::fmt;
use std::ops::{Add, AddAssign};

use crate::annotate::AnnotatedToken;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Inflection,
    Reordering,
    Missing,
    Extra,
    LexicalChoice,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Inflection,
        Category::Reordering,
        Category::Missing,
        Category::Extra,
        Category::LexicalChoice,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Inflection => "inflection",
            Category::Reordering => "reordering",
            Category::Missing => "missing",
            Category::Extra => "extra",
            Category::LexicalChoice => "lexical_choice",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub inflection: usize,
    pub reordering: usize,
    pub missing: usize,
    pub extra: usize,
    pub lexical_choice: usize,
}

impl ErrorCounts {
    /// Missing, extra and lexical-choice errors together.
    pub fn grouped_lexical(&self) -> usize {
        self.missing + self.extra + self.lexical_choice
    }

    pub fn total(&self) -> usize {
        self.inflection + self.reordering + self.grouped_lexical()
    }

    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::Inflection => self.inflection,
            Category::Reordering => self.reordering,
            Category::Missing => self.missing,
            Category::Extra => self.extra,
            Category::LexicalChoice => self.lexical_choice,
        }
    }

    fn bump(&mut self, c: Category) {
        match c {
            Category::Inflection => self.inflection += 1,
            Category::Reordering => self.reordering += 1,
            Category::Missing => self.missing += 1,
            Category::Extra => self.extra += 1,
            Category::LexicalChoice => self.lexical_choice += 1,
        }
    }
}

impl AddAssign for ErrorCounts {
    fn add_assign(&mut self, o: Self) {
        self.inflection += o.inflection;
        self.reordering += o.reordering;
        self.missing += o.missing;
        self.extra += o.extra;
        self.lexical_choice += o.lexical_choice;
    }
}

impl Add for ErrorCounts {
    type Output = Self;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

/// One step of a word alignment. Indices refer to hypothesis and reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EditOp {
    /// Diagonal step: a match if the surface forms are equal, else a substitution.
    Diag(usize, usize),
    /// Reference word without a counterpart.
    Del(usize),
    /// Hypothesis word without a counterpart.
    Ins(usize),
}

/// Minimal edit script; ties broken towards the lexicographically smallest
/// sequence of steps (diagonal < deletion < insertion).
pub fn align<T: PartialEq>(hyp: &[T], reference: &[T]) -> Vec<EditOp> {
    let (n, m) = (hyp.len(), reference.len());
    // cost[i][j]: cheapest alignment of hyp[i..] with reference[j..].
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            cost[i][j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let diag = cost[i + 1][j + 1] + usize::from(hyp[i] != reference[j]);
                diag.min(cost[i][j + 1] + 1).min(cost[i + 1][j] + 1)
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut ops = Vec::with_capacity(n.max(m));
    while i < n || j < m {
        if i < n && j < m && cost[i][j] == cost[i + 1][j + 1] + usize::from(hyp[i] != reference[j]) {
            ops.push(EditOp::Diag(i, j));
            i += 1;
            j += 1;
        } else if j < m && cost[i][j] == cost[i][j + 1] + 1 {
            ops.push(EditOp::Del(j));
            j += 1;
        } else {
            ops.push(EditOp::Ins(i));
            i += 1;
        }
    }
    ops
}

/// Error counts split by the side a word belongs to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SideCounts {
    pub inflection: usize,
    pub reordering: usize,
    pub lexical_choice: usize,
    /// Extra words on the hypothesis side, missing words on the reference side.
    pub unmatched: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Classification {
    pub counts: ErrorCounts,
    pub hyp_side: SideCounts,
    pub ref_side: SideCounts,
    /// Category of each non-matching edit operation, in script order.
    pub ops: Vec<(EditOp, Category)>,
}

fn lemmas_equal(a: &AnnotatedToken, b: &AnnotatedToken) -> bool {
    a.lemma.to_lowercase() == b.lemma.to_lowercase()
}

fn check_lemmas(side: &str, toks: &[AnnotatedToken]) -> Result<()> {
    match toks.iter().position(|t| t.lemma.is_empty()) {
        Some(i) => Err(Error::data(format!("{side} word {i} ({}) has no lemma", toks[i].form))),
        None => Ok(()),
    }
}

/// Categorises a given edit script (shared by [`classify_errors`] and tests).
pub fn classify_script(hyp: &[AnnotatedToken], reference: &[AnnotatedToken], script: &[EditOp]) -> Classification {
    let mut out = Classification::default();
    // Erroneous words eligible for reordering.
    let mut hyp_err = Vec::new();
    let mut ref_err = Vec::new();
    for &op in script {
        match op {
            EditOp::Diag(i, j) => {
                if hyp[i].form != reference[j].form && !lemmas_equal(&hyp[i], &reference[j]) {
                    hyp_err.push(i);
                    ref_err.push(j);
                }
            }
            EditOp::Del(j) => ref_err.push(j),
            EditOp::Ins(i) => hyp_err.push(i),
        }
    }
    hyp_err.sort_unstable();
    ref_err.sort_unstable();
    let mut hyp_paired = vec![false; hyp.len()];
    let mut ref_paired = vec![false; reference.len()];
    for &i in &hyp_err {
        if let Some(&j) = ref_err
            .iter()
            .find(|&&j| !ref_paired[j] && reference[j].form == hyp[i].form)
        {
            hyp_paired[i] = true;
            ref_paired[j] = true;
        }
    }
    for &op in script {
        let cat = match op {
            EditOp::Diag(i, j) if hyp[i].form == reference[j].form => continue,
            EditOp::Diag(i, j) if lemmas_equal(&hyp[i], &reference[j]) => {
                out.hyp_side.inflection += 1;
                out.ref_side.inflection += 1;
                Category::Inflection
            }
            EditOp::Diag(i, j) => {
                if hyp_paired[i] || ref_paired[j] {
                    Category::Reordering
                } else {
                    out.hyp_side.lexical_choice += 1;
                    out.ref_side.lexical_choice += 1;
                    Category::LexicalChoice
                }
            }
            EditOp::Del(j) if ref_paired[j] => Category::Reordering,
            EditOp::Del(_) => {
                out.ref_side.unmatched += 1;
                Category::Missing
            }
            EditOp::Ins(i) if hyp_paired[i] => Category::Reordering,
            EditOp::Ins(_) => {
                out.hyp_side.unmatched += 1;
                Category::Extra
            }
        };
        out.counts.bump(cat);
        out.ops.push((op, cat));
    }
    out.hyp_side.reordering = hyp_paired.iter().filter(|&&p| p).count();
    out.ref_side.reordering = ref_paired.iter().filter(|&&p| p).count();
    out
}

/// Classifies the errors of one hypothesis against its reference.
///
/// Reordering is decided per edit operation: an operation counts as reordering
/// when one of its words was paired with an identical erroneous word on the
/// other side (greedy, leftmost reference word first).
pub fn classify_detailed(hyp: &[AnnotatedToken], reference: &[AnnotatedToken]) -> Result<Classification> {
    check_lemmas("hypothesis", hyp)?;
    check_lemmas("reference", reference)?;
    let hf: Vec<&str> = hyp.iter().map(|t| t.form.as_str()).collect();
    let rf: Vec<&str> = reference.iter().map(|t| t.form.as_str()).collect();
    Ok(classify_script(hyp, reference, &align(&hf, &rf)))
}

pub fn classify_errors(hyp: &[AnnotatedToken], reference: &[AnnotatedToken]) -> Result<ErrorCounts> {
    Ok(classify_detailed(hyp, reference)?.counts)
}

pub fn corpus_error_totals<S: AsRef<[AnnotatedToken]>>(hyps: &[S], refs: &[S]) -> Result<ErrorCounts> {
    if hyps.len() != refs.len() {
        return Err(Error::argument(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = ErrorCounts::default();
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        total += classify_errors(h.as_ref(), r.as_ref()).map_err(|e| Error::Sentence {
            index: i,
            source: Box::new(e),
        })?;
    }
    Ok(total)
}

/// `(sys − base) / base`; `None` when the baseline count is zero.
pub fn relative_change_of(sys: usize, base: usize) -> Option<f64> {
    (base > 0).then(|| (sys as f64 - base as f64) / base as f64)
}

/// Per-category relative change, plus the grouped lexical category last.
pub fn relative_change(sys: &ErrorCounts, base: &ErrorCounts) -> Vec<(String, Option<f64>)> {
    let mut out: Vec<(String, Option<f64>)> = Category::ALL
        .iter()
        .map(|&c| (c.to_string(), relative_change_of(sys.get(c), base.get(c))))
        .collect();
    out.push((
        "lexical".to_string(),
        relative_change_of(sys.grouped_lexical(), base.grouped_lexical()),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{Feats, Upos};

    fn toks(pairs: &[(&str, &str)]) -> Vec<AnnotatedToken> {
        pairs
            .iter()
            .map(|(f, l)| AnnotatedToken::new(f, l, Upos::X, Feats::new()))
            .collect()
    }

    #[test]
    fn identical_has_no_errors() {
        let s = toks(&[("a", "a"), ("b", "b")]);
        assert_eq!(classify_errors(&s, &s).unwrap(), ErrorCounts::default());
    }

    #[test]
    fn inflection_example() {
        let hyp = toks(&[("die", "die"), ("Katze", "Katze"), ("schläft", "schlafen")]);
        let r = toks(&[("die", "die"), ("Katzen", "Katze"), ("schlafen", "schlafen")]);
        let c = classify_errors(&hyp, &r).unwrap();
        assert_eq!(c, ErrorCounts { inflection: 2, ..Default::default() });
    }

    #[test]
    fn swap_is_reordering() {
        let hyp = toks(&[("A", "a"), ("B", "b")]);
        let r = toks(&[("B", "b"), ("A", "a")]);
        let c = classify_errors(&hyp, &r).unwrap();
        assert_eq!(c, ErrorCounts { reordering: 2, ..Default::default() });
    }

    #[test]
    fn missing_extra_lexical() {
        let hyp = toks(&[("a", "a"), ("x", "x")]);
        let r = toks(&[("a", "a"), ("y", "y"), ("z", "z")]);
        let c = classify_errors(&hyp, &r).unwrap();
        assert_eq!(c, ErrorCounts { lexical_choice: 1, missing: 1, ..Default::default() });
        let c = classify_errors(&toks(&[("q", "q")]), &[]).unwrap();
        assert_eq!(c.extra, 1);
    }

    #[test]
    fn lemma_case_is_ignored_and_missing_lemma_rejected() {
        let hyp = toks(&[("Go", "GO")]);
        let r = toks(&[("went", "go")]);
        assert_eq!(classify_errors(&hyp, &r).unwrap().inflection, 1);
        let bad = toks(&[("x", "")]);
        assert!(classify_errors(&bad, &r).is_err());
    }

    #[test]
    fn alignment_prefers_diagonal_then_deletion() {
        // "a" vs "b a": deleting b then matching a is the only optimum.
        assert_eq!(align(&["a"], &["b", "a"]), vec![EditOp::Del(0), EditOp::Diag(0, 1)]);
        // "a" vs "b": substitution beats deletion + insertion.
        assert_eq!(align(&["a"], &["b"]), vec![EditOp::Diag(0, 0)]);
    }

    #[test]
    fn relative_changes() {
        let base = ErrorCounts { inflection: 100, reordering: 0, ..Default::default() };
        let sys = ErrorCounts { inflection: 120, ..Default::default() };
        let rc = relative_change(&sys, &base);
        assert!((rc[0].1.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(rc[1].1, None);
        assert_eq!(relative_change(&base, &base)[0].1, Some(0.0));
    }

    #[test]
    fn corpus_totals() {
        let a = toks(&[("a", "a")]);
        let b = toks(&[("b", "b")]);
        let t = corpus_error_totals(&[a.clone(), a.clone()], &[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.lexical_choice, 1);
        assert!(corpus_error_totals(&[a.clone()], &[]).is_err());
    }
}
