//! Corpus preparation: tokenisation, truecasing, length filtering and downsampling.
//!
//! Pipeline order is fixed: tokenize, truecase, filter, downsample. Annotation and
//! BPE happen afterwards, so interleaved tags never count toward the length limit.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tokens};

/// Default length limit for parallel sentences.
pub const MAX_SENTENCE_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub id: usize,
    pub src: Tokens,
    pub tgt: Tokens,
}

impl SentencePair {
    pub fn new(id: usize, src: Tokens, tgt: Tokens) -> Self {
        Self { id, src, tgt }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '«' | '»' | '“' | '”' | '„' | '‘' | '’' | '…' | '¿' | '¡' | '–' | '—'
        )
}

/// Splits on whitespace and detaches leading and trailing punctuation characters,
/// one token per character. Punctuation inside a word is left alone.
pub fn tokenize(line: &str) -> Tokens {
    let mut out = Vec::new();
    for chunk in line.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars.iter().position(|&c| !is_punct(c));
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|&c| !is_punct(c)).unwrap() + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

/// Most frequent casing of each word, keyed by its lowercased form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TruecaseModel {
    table: HashMap<String, (String, usize)>,
}

impl TruecaseModel {
    /// Learns casings from non-initial positions, where casing is not forced by
    /// sentence position.
    pub fn learn<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut counts: HashMap<String, HashMap<String, usize>> = HashMap::new();
        for sent in sentences {
            for tok in sent.as_ref().iter().skip(1) {
                *counts
                    .entry(tok.to_lowercase())
                    .or_default()
                    .entry(tok.clone())
                    .or_default() += 1;
            }
        }
        let table = counts
            .into_iter()
            .map(|(key, casings)| {
                // highest count, then lexicographically smallest casing
                let best = casings
                    .into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                    .unwrap();
                (key, best)
            })
            .collect();
        Self { table }
    }

    pub fn insert(&mut self, casing: &str, count: usize) {
        assert!(count >= 1, "truecase counts start at 1");
        self.table
            .insert(casing.to_lowercase(), (casing.to_string(), count));
    }

    pub fn get(&self, lowercased: &str) -> Option<&str> {
        self.table.get(lowercased).map(|(c, _)| c.as_str())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Writes `lowercased<TAB>casing<TAB>count` lines sorted by key.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut keys: Vec<_> = self.table.keys().collect();
        keys.sort();
        for k in keys {
            let (casing, count) = &self.table[k];
            writeln!(w, "{k}\t{casing}\t{count}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut table = HashMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            if fields.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let count: usize = fields[2].parse().map_err(|_| bad("count is not an integer"))?;
            if count == 0 {
                return Err(bad("count must be positive"));
            }
            if fields[1].to_lowercase() != fields[0] {
                return Err(bad("casing does not lowercase to its key"));
            }
            table.insert(fields[0].to_string(), (fields[1].to_string(), count));
        }
        Ok(Self { table })
    }
}

/// Re-cases the sentence-initial token to its most frequent training casing.
pub fn truecase(model: &TruecaseModel, tokens: &[String]) -> Tokens {
    let mut out = tokens.to_vec();
    if let Some(first) = out.first_mut() {
        if let Some(casing) = model.get(&first.to_lowercase()) {
            *first = casing.to_string();
        }
    }
    out
}

/// Keeps the pairs whose sides both have between 1 and `max_len` tokens.
pub fn filter_pairs(pairs: Vec<SentencePair>, max_len: usize) -> Vec<SentencePair> {
    let ok = |n: usize| (1..=max_len).contains(&n);
    pairs
        .into_iter()
        .filter(|p| ok(p.src.len()) && ok(p.tgt.len()))
        .collect()
}

/// Uniform sample of `n` pairs without replacement, in original corpus order.
pub fn downsample(pairs: &[SentencePair], n: usize, seed: u64) -> Result<Vec<SentencePair>> {
    if n > pairs.len() {
        return Err(Error::argument(format!(
            "cannot sample {n} pairs from a corpus of {}",
            pairs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, pairs.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pairs[i].clone()).collect())
}

/// Reads two line-aligned files into tokenized pairs. `pretokenized` input is only
/// split on whitespace.
pub fn read_parallel<R1: BufRead, R2: BufRead>(
    src: R1,
    tgt: R2,
    pretokenized: bool,
) -> Result<Vec<SentencePair>> {
    let split = |l: &str| -> Tokens {
        if pretokenized {
            l.split_whitespace().map(str::to_string).collect()
        } else {
            tokenize(l)
        }
    };
    let src: Vec<String> = src.lines().collect::<std::io::Result<_>>()?;
    let tgt: Vec<String> = tgt.lines().collect::<std::io::Result<_>>()?;
    if src.len() != tgt.len() {
        return Err(Error::data(format!(
            "parallel files differ in length: {} vs {} lines",
            src.len(),
            tgt.len()
        )));
    }
    Ok(src
        .iter()
        .zip(&tgt)
        .enumerate()
        .map(|(id, (s, t))| SentencePair::new(id, split(s), split(t)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("It has happened before."),
            toks("It has happened before .")
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("word,"), toks("word ,"));
        assert_eq!(tokenize("(don't) ..."), toks("( don't ) . . ."));
    }

    #[test]
    fn truecase_examples() {
        let mut m = TruecaseModel::default();
        m.insert("it", 3);
        assert_eq!(truecase(&m, &toks("It has")), toks("it has"));
        assert_eq!(
            truecase(&TruecaseModel::default(), &toks("Berlin")),
            toks("Berlin")
        );
        let mut m = TruecaseModel::default();
        m.insert("X", 1);
        assert_eq!(truecase(&m, &toks("x x")), toks("X x"));
    }

    #[test]
    fn truecase_learning_uses_majority_casing() {
        let corpus = vec![
            toks("The Berlin wall"),
            toks("In Berlin it rained"),
            toks("It was berlin"),
        ];
        let m = TruecaseModel::learn(&corpus);
        assert_eq!(m.get("berlin"), Some("Berlin"));
        assert_eq!(m.get("it"), Some("it"));
        // sentence-initial occurrences are ignored
        assert_eq!(m.get("the"), None);
    }

    #[test]
    fn truecase_model_file_roundtrip() {
        let corpus = vec![toks("a Paris b paris Paris")];
        let m = TruecaseModel::learn(&corpus);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "b\tb\t1\nparis\tParis\t2\n");
        assert_eq!(TruecaseModel::read(&buf[..]).unwrap(), m);
        assert!(TruecaseModel::read(&b"x\tY\t1\n"[..]).is_err());
        assert!(TruecaseModel::read(&b"x\tx\t0\n"[..]).is_err());
    }

    fn pair(id: usize, ls: usize, lt: usize) -> SentencePair {
        SentencePair::new(id, vec!["w".into(); ls], vec!["v".into(); lt])
    }

    #[test]
    fn filter_boundaries() {
        let pairs = vec![pair(0, 101, 5), pair(1, 100, 100), pair(2, 3, 0), pair(3, 1, 1)];
        let kept: Vec<usize> = filter_pairs(pairs, MAX_SENTENCE_LEN)
            .iter()
            .map(|p| p.id)
            .collect();
        assert_eq!(kept, vec![1, 3]);
    }

    #[test]
    fn downsample_examples() {
        let pairs: Vec<_> = (0..10).map(|i| pair(i, 2, 2)).collect();
        assert_eq!(downsample(&pairs, 10, 99).unwrap(), pairs);
        assert_eq!(
            downsample(&pairs, 3, 7).unwrap(),
            downsample(&pairs, 3, 7).unwrap()
        );
        assert!(downsample(&pairs, 11, 0).is_err());

        let big: Vec<_> = (0..1000).map(|i| pair(i, 1, 1)).collect();
        let s = downsample(&big, 50, 1).unwrap();
        let ids: std::collections::BTreeSet<usize> = s.iter().map(|p| p.id).collect();
        assert_eq!(ids.len(), 50);
        assert!(s.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn downsample_seeds_differ() {
        let big: Vec<_> = (0..200).map(|i| pair(i, 1, 1)).collect();
        let distinct: std::collections::BTreeSet<Vec<usize>> = (0..20)
            .map(|seed| {
                downsample(&big, 10, seed)
                    .unwrap()
                    .iter()
                    .map(|p| p.id)
                    .collect()
            })
            .collect();
        assert!(distinct.len() > 15);
    }

    #[test]
    fn read_parallel_checks_alignment() {
        let pairs = read_parallel(&b"a b.\nc\n"[..], &b"x\ny z\n"[..], false).unwrap();
        assert_eq!(pairs[0].src, toks("a b ."));
        assert_eq!(pairs[1].tgt, toks("y z"));
        assert!(read_parallel(&b"a\n"[..], &b"x\ny\n"[..], true).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tokenize_idempotent(line in "[a-zA-Z0-9 .,;:!?'()\"-]{0,40}") {
                let once = tokenize(&line);
                prop_assert_eq!(tokenize(&once.join(" ")), once);
            }

            #[test]
            fn filter_is_idempotent_subsequence(
                lens in proptest::collection::vec((0usize..8, 0usize..8), 0..20),
                max_len in 1usize..6,
            ) {
                let pairs: Vec<_> = lens.iter().enumerate()
                    .map(|(i, &(a, b))| SentencePair::new(i, vec!["s".into(); a], vec!["t".into(); b]))
                    .collect();
                let once = filter_pairs(pairs.clone(), max_len);
                prop_assert!(once.windows(2).all(|w| w[0].id < w[1].id));
                prop_assert!(once.iter().all(|p| (1..=max_len).contains(&p.src.len())
                    && (1..=max_len).contains(&p.tgt.len())));
                prop_assert_eq!(filter_pairs(once.clone(), max_len), once);
            }

            #[test]
            fn truecase_touches_only_first(words in proptest::collection::vec("[a-zA-Z]{1,5}", 0..6)) {
                let mut m = TruecaseModel::default();
                for w in &words { m.insert(&w.to_uppercase(), 1); }
                let out = truecase(&m, &words);
                prop_assert_eq!(out.len(), words.len());
                if words.len() > 1 { prop_assert_eq!(&out[1..], &words[1..]); }
            }
        }
    }
}
