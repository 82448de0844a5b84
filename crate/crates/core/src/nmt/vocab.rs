use std::collections::HashMap;

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Bijection between symbols and indices; indices 0–3 are reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Indexes every observed symbol, most frequent first, ties lexicographic.
    pub fn build<S: AsRef<[String]>>(corpus: &[S]) -> Result<Self> {
        if corpus.iter().all(|s| s.as_ref().is_empty()) {
            return Err(Error::argument("cannot build a vocabulary from an empty corpus"));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for sent in corpus {
            for tok in sent.as_ref() {
                if !RESERVED.contains(&tok.as_str()) {
                    *freq.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut entries: Vec<(&str, usize)> = freq.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_symbols(
            entries.into_iter().map(|(s, _)| s.to_string()).collect(),
        ))
    }

    /// Vocabulary over `symbols` (reserved entries are prepended).
    pub fn from_symbols(symbols: Vec<String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(symbols.into_iter().filter(|s| !RESERVED.contains(&s.as_str())));
        let index = all
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self {
            symbols: all,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK)
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    /// Non-reserved symbols in index order.
    pub fn symbols(&self) -> &[String] {
        &self.symbols[RESERVED.len()..]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Maps indices back to symbols, dropping pad/bos/eos.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD && i != BOS && i != EOS)
            .map(|&i| self.symbols[i].clone())
            .collect()
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }
}
