//! Byte-pair encoding with atomic tags.
//!
//! Merges are learned from plain surface text. When applied to an interleaved
//! stream, tag tokens pass through untouched and stay immediately before the first
//! sub-word unit of their word; every non-final unit carries the `@@` marker.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::annotate::is_tag;
use crate::{Error, Result, Tokens};

/// Continuation marker appended to non-final sub-word units.
pub const MARKER: &str = "@@";

/// Header line of merge files.
pub const MERGES_HEADER: &str = "#version: interleave-mt 1";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self { merges, ranks }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// First `k` merges of this model.
    pub fn truncated(&self, k: usize) -> Self {
        Self::from_merges(self.merges[..k.min(self.merges.len())].to_vec())
    }

    /// Learns up to `num_merges` merges from the words of `corpus`, skipping tags.
    ///
    /// The most frequent adjacent pair is merged first; ties go to the
    /// lexicographically smallest pair. Learning stops early once no pair occurs
    /// at least twice.
    pub fn learn<S: AsRef<[String]>>(corpus: &[S], num_merges: usize) -> Self {
        let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
        for sent in corpus {
            for w in sent.as_ref() {
                if !is_tag(w) {
                    *word_freq.entry(w.as_str()).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(Vec<String>, usize)> = word_freq
            .into_iter()
            .map(|(w, f)| (w.chars().map(String::from).collect(), f))
            .collect();

        let mut merges = Vec::new();
        while merges.len() < num_merges {
            let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, f) in &words {
                for pair in syms.windows(2) {
                    *counts.entry((&pair[0], &pair[1])).or_default() += f;
                }
            }
            let best = counts
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some(((l, r), count)) = best else { break };
            if count < 2 {
                break;
            }
            let (l, r) = (l.to_string(), r.to_string());
            for (syms, _) in words.iter_mut() {
                merge_in_place(syms, &l, &r);
            }
            merges.push((l, r));
        }
        Self::from_merges(merges)
    }

    /// Splits one word into sub-word units (without markers).
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            merge_in_place(&mut syms, l, r);
        }
        syms
    }

    /// Segments every surface word of `stream`; tags pass through unchanged.
    pub fn apply(&self, stream: &[String]) -> Tokens {
        let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
        let mut out = Vec::with_capacity(stream.len() * 2);
        for tok in stream {
            if is_tag(tok) {
                out.push(tok.clone());
                continue;
            }
            let units = cache
                .entry(tok.as_str())
                .or_insert_with(|| self.segment_word(tok));
            let last = units.len() - 1;
            for (i, u) in units.iter().enumerate() {
                if i < last {
                    out.push(format!("{u}{MARKER}"));
                } else {
                    out.push(u.clone());
                }
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MERGES_HEADER}")?;
        for (l, r) in &self.merges {
            writeln!(w, "{l} {r}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim_end() != MERGES_HEADER {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("expected header {MERGES_HEADER:?}"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected \"left right\"".into(),
                });
            }
            merges.push((parts[0].to_string(), parts[1].to_string()));
        }
        Ok(Self::from_merges(merges))
    }
}

fn merge_in_place(syms: &mut Vec<String>, l: &str, r: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == l && syms[i + 1] == r {
            let right = syms.remove(i + 1);
            syms[i].push_str(&right);
        }
        i += 1;
    }
}

/// Counters for irregularities met while undoing BPE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UndoStats {
    /// Continuation units with nothing to attach to (end of stream or a tag).
    pub dangling: usize,
}

/// Joins `u₁@@ … uₖ@@ uₖ₊₁` runs back into words. Tags are left in place.
pub fn undo(stream: &[String]) -> Tokens {
    undo_counted(stream, &mut UndoStats::default())
}

pub fn undo_counted(stream: &[String], stats: &mut UndoStats) -> Tokens {
    let mut out = Vec::with_capacity(stream.len());
    let mut pending = String::new();
    let mut open = false;
    for tok in stream {
        if is_tag(tok) {
            if open {
                stats.dangling += 1;
                out.push(std::mem::take(&mut pending));
                open = false;
            }
            out.push(tok.clone());
            continue;
        }
        match tok.strip_suffix(MARKER) {
            Some(unit) => {
                pending.push_str(unit);
                open = true;
            }
            None => {
                pending.push_str(tok);
                out.push(std::mem::take(&mut pending));
                open = false;
            }
        }
    }
    if open {
        stats.dangling += 1;
        out.push(pending);
    }
    if stats.dangling > 0 {
        log::debug!("joined {} dangling continuation units", stats.dangling);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn first_merge_is_most_frequent() {
        let corpus = vec![toks("aaab"); 10];
        let m = BpeModel::learn(&corpus, 1);
        assert_eq!(m.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn ties_break_lexicographically() {
        // (a,b) and (c,d) both occur 3 times
        let corpus = vec![toks("ab cd"); 3];
        let m = BpeModel::learn(&corpus, 1);
        assert_eq!(m.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn zero_merges_gives_characters() {
        let m = BpeModel::learn(&[toks("hello world")], 0);
        assert!(m.is_empty());
        assert_eq!(m.apply(&toks("hey")), toks("h@@ e@@ y"));
    }

    #[test]
    fn learning_is_deterministic() {
        let corpus = vec![toks("the cat sat on the mat"), toks("a cat and a hat")];
        assert_eq!(BpeModel::learn(&corpus, 20), BpeModel::learn(&corpus, 20));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let m = BpeModel::learn(&[toks("abc")], 10);
        assert!(m.is_empty());
    }

    fn happen_model() -> BpeModel {
        let merges = [
            ("h", "a"),
            ("ha", "p"),
            ("hap", "p"),
            ("happ", "e"),
            ("happe", "n"),
            ("e", "d"),
        ];
        BpeModel::from_merges(
            merges
                .iter()
                .map(|(l, r)| (l.to_string(), r.to_string()))
                .collect(),
        )
    }

    #[test]
    fn tags_stay_atomic() {
        let m = happen_model();
        assert_eq!(
            m.apply(&toks("VERB_Tense=Past|VerbForm=Part happened")).join(" "),
            "VERB_Tense=Past|VerbForm=Part happen@@ ed"
        );
        let tags = toks("ADV__ <dum> NOUN");
        assert_eq!(m.apply(&tags), tags);
        let whole = BpeModel::from_merges(vec![("e".into(), "d".into())]);
        assert_eq!(whole.apply(&toks("ed")), toks("ed"));
    }

    #[test]
    fn undo_examples() {
        assert_eq!(undo(&toks("happen@@ ed")), toks("happened"));
        assert_eq!(undo(&toks("a b c")), toks("a b c"));
        assert_eq!(undo(&toks("a@@ b@@ c")), toks("abc"));
        let mut stats = UndoStats::default();
        assert_eq!(undo_counted(&toks("x a@@"), &mut stats), toks("x a"));
        assert_eq!(stats.dangling, 1);
        let mut stats = UndoStats::default();
        assert_eq!(
            undo_counted(&toks("a@@ NOUN b"), &mut stats),
            toks("a NOUN b")
        );
        assert_eq!(stats.dangling, 1);
    }

    #[test]
    fn merge_file_roundtrip() {
        let m = happen_model();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"#version: interleave-mt 1\nh a\n"));
        assert_eq!(BpeModel::read(&buf[..]).unwrap(), m);
        assert!(BpeModel::read(&b"h a\n"[..]).is_err());
        assert!(BpeModel::read(&b"#version: interleave-mt 1\nh a b\n"[..]).is_err());
    }

    mod props {
        use super::super::*;
        use crate::annotate::{interleave, synth::synth_corpus, TagKind};
        use proptest::prelude::*;

        fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
            proptest::collection::vec(proptest::collection::vec("[a-e]{1,6}", 1..6), 1..8)
        }

        proptest! {
            #[test]
            fn undo_inverts_apply(c in corpus(), k in 0usize..30) {
                let m = BpeModel::learn(&c, k);
                for s in &c {
                    prop_assert_eq!(&undo(&m.apply(s)), s);
                }
            }

            #[test]
            fn segment_counts_non_increasing(c in corpus(), k in 0usize..25) {
                let m = BpeModel::learn(&c, k + 1);
                let count = |m: &BpeModel| c.iter().map(|s| m.apply(s).len()).sum::<usize>();
                prop_assert!(count(&m) <= count(&m.truncated(k)));
            }
        }

        #[test]
        fn interleaved_synthetic_corpus_keeps_one_tag_per_word() {
            let data = synth_corpus(4, 200);
            let plain: Vec<Tokens> = data.iter().map(|e| e.pair.tgt.clone()).collect();
            let m = BpeModel::learn(&plain, 40);
            for e in &data {
                for kind in TagKind::ALL {
                    let stream = interleave(&e.tgt, kind);
                    let sub = m.apply(&stream);
                    let mut words = 0;
                    let mut expect_tag = true;
                    for t in &sub {
                        if expect_tag {
                            assert!(is_tag(t), "{t}");
                            assert!(!t.ends_with(MARKER));
                            words += 1;
                            expect_tag = false;
                        } else {
                            assert!(!is_tag(t));
                            expect_tag = !t.ends_with(MARKER);
                        }
                    }
                    assert_eq!(words, e.tgt.len());
                    assert_eq!(undo(&sub), stream);
                }
            }
        }
    }
}
