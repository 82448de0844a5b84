//! `key = value` configuration files and the experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use tagmt::annotate::TagKind;
use tagmt::nmt::config::format_f64;
use tagmt::nmt::{Family, ModelConfig, TrainingConfig};

use crate::error::{CliError, CliResult};

/// Parses `key = value` lines. `#` starts a comment; blank lines are ignored;
/// later keys override earlier ones.
pub fn parse_kv(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(CliError::Config(format!("line {}: invalid key {k:?}", n + 1)));
        }
        kv.insert(k.to_string(), v.trim().to_string());
    }
    Ok(kv)
}

/// Which sides carry tags, and of what kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TagArm {
    pub src: Option<TagKind>,
    pub tgt: Option<TagKind>,
}

impl TagArm {
    pub const NONE: TagArm = TagArm { src: None, tgt: None };

    pub fn all() -> Vec<TagArm> {
        ["none", "SL-DUM", "SL-POS", "SL-MSD", "TL-DUM", "TL-POS", "TL-MSD", "SLMSD+TLPOS"]
            .iter()
            .map(|s| s.parse().expect("known arm"))
            .collect()
    }

    pub fn is_baseline(&self) -> bool {
        self.src.is_none() && self.tgt.is_none()
    }
}

fn kind_name(k: TagKind) -> &'static str {
    match k {
        TagKind::Dum => "DUM",
        TagKind::Pos => "POS",
        TagKind::Msd => "MSD",
    }
}

fn parse_kind(s: &str) -> Option<TagKind> {
    match s {
        "DUM" => Some(TagKind::Dum),
        "POS" => Some(TagKind::Pos),
        "MSD" => Some(TagKind::Msd),
        _ => None,
    }
}

impl FromStr for TagArm {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let bad = || CliError::Config(format!("unknown tag arm {s:?}"));
        if s == "none" {
            return Ok(TagArm::NONE);
        }
        if s == "SLMSD+TLPOS" {
            return Ok(TagArm {
                src: Some(TagKind::Msd),
                tgt: Some(TagKind::Pos),
            });
        }
        let (side, kind) = s.split_once('-').ok_or_else(bad)?;
        let kind = parse_kind(kind).ok_or_else(bad)?;
        match side {
            "SL" => Ok(TagArm { src: Some(kind), tgt: None }),
            "TL" => Ok(TagArm { src: None, tgt: Some(kind) }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for TagArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.src, self.tgt) {
            (None, None) => f.write_str("none"),
            (Some(TagKind::Msd), Some(TagKind::Pos)) => f.write_str("SLMSD+TLPOS"),
            (Some(k), None) => write!(f, "SL-{}", kind_name(k)),
            (None, Some(k)) => write!(f, "TL-{}", kind_name(k)),
            (Some(a), Some(b)) => write!(f, "SL{}+TL{}", kind_name(a), kind_name(b)),
        }
    }
}

/// Text and optional CoNLL-U annotation files of one split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitPaths {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub src_conllu: Option<PathBuf>,
    pub tgt_conllu: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusSource {
    /// The built-in synthetic pair with the given split sizes.
    Synthetic { train: usize, dev: usize, test: usize },
    Files {
        train: SplitPaths,
        dev: SplitPaths,
        test: SplitPaths,
        pretokenized: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Language pair identifier (free text, recorded in the manifest).
    pub pair: String,
    pub seed: u64,
    pub arm: TagArm,
    pub corpus: CorpusSource,
    /// Training pairs kept after filtering (0 keeps all).
    pub train_size: usize,
    pub max_len: usize,
    pub bpe_src_ops: usize,
    pub bpe_tgt_ops: usize,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub beam: usize,
    pub class_mask: bool,
    pub bootstrap_iterations: usize,
    pub alpha: f64,
    pub baseline_run: Option<PathBuf>,
}

fn get<T: FromStr>(kv: &BTreeMap<String, String>, key: &str, default: T) -> CliResult<T> {
    match kv.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| CliError::Config(format!("invalid value {v:?} for {key}"))),
    }
}

fn split_paths(kv: &BTreeMap<String, String>, split: &str) -> CliResult<SplitPaths> {
    let req = |side: &str| {
        kv.get(&format!("corpus.{split}.{side}"))
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Config(format!("missing corpus.{split}.{side}")))
    };
    let opt = |side: &str| kv.get(&format!("corpus.{split}.{side}_conllu")).map(PathBuf::from);
    Ok(SplitPaths {
        src: req("src")?,
        tgt: req("tgt")?,
        src_conllu: opt("src"),
        tgt_conllu: opt("tgt"),
    })
}

const KNOWN_KEYS: &[&str] = &[
    "pair",
    "seed",
    "arm",
    "baseline_run",
    "corpus.kind",
    "corpus.pretokenized",
    "corpus.synthetic.train",
    "corpus.synthetic.dev",
    "corpus.synthetic.test",
    "data.train_size",
    "data.max_len",
    "bpe.ops",
    "bpe.src_ops",
    "bpe.tgt_ops",
    "model.family",
    "model.hidden",
    "model.embedding",
    "model.dim",
    "model.layers",
    "model.heads",
    "model.tied_embeddings",
    "model.dropout",
    "model.label_smoothing",
    "train.preset",
    "train.base_lr",
    "train.warmup_steps",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.clip_norm",
    "train.validate_every",
    "train.patience",
    "train.token_cap",
    "train.max_steps",
    "train.valid_bleu_sentences",
    "train.valid_beam",
    "train.seed",
    "decode.beam",
    "decode.class_mask",
    "eval.bootstrap_iterations",
    "eval.alpha",
    "grid.bpe_ops",
    "grid.tied",
    "grid.sizes",
];

fn is_known_key(k: &str) -> bool {
    if KNOWN_KEYS.contains(&k) {
        return true;
    }
    // corpus.<split>.<side>
    let parts: Vec<&str> = k.split('.').collect();
    matches!(
        parts.as_slice(),
        ["corpus", "train" | "dev" | "test", "src" | "tgt" | "src_conllu" | "tgt_conllu"]
    )
}

impl ExperimentConfig {
    /// Synthetic pair, desk-sized transformer, no tags.
    pub fn synthetic_default() -> Self {
        Self::from_kv(&BTreeMap::new()).expect("defaults are valid")
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> CliResult<Self> {
        for k in kv.keys() {
            if !is_known_key(k) {
                return Err(CliError::Config(format!("unknown key {k}")));
            }
        }
        let seed: u64 = get(kv, "seed", 1)?;
        let corpus = match kv.get("corpus.kind").map(String::as_str).unwrap_or("synthetic") {
            "synthetic" => CorpusSource::Synthetic {
                train: get(kv, "corpus.synthetic.train", 5000)?,
                dev: get(kv, "corpus.synthetic.dev", 500)?,
                test: get(kv, "corpus.synthetic.test", 500)?,
            },
            "files" => CorpusSource::Files {
                train: split_paths(kv, "train")?,
                dev: split_paths(kv, "dev")?,
                test: split_paths(kv, "test")?,
                pretokenized: get(kv, "corpus.pretokenized", false)?,
            },
            other => return Err(CliError::Config(format!("unknown corpus.kind {other:?}"))),
        };
        let model = ModelConfig::from_kv(kv)?;
        let preset = match kv.get("train.preset").map(String::as_str).unwrap_or("desk") {
            "desk" => TrainingConfig::desk(model.family()),
            "published" => TrainingConfig::published(model.family()),
            other => return Err(CliError::Config(format!("unknown train.preset {other:?}"))),
        };
        let mut training = TrainingConfig::from_kv(kv, preset)?;
        if !kv.contains_key("train.seed") {
            training.seed = seed;
        }
        let bpe_ops: usize = get(kv, "bpe.ops", 300)?;
        let cfg = Self {
            pair: get(kv, "pair", "synthetic".to_string())?,
            seed,
            arm: get(kv, "arm", TagArm::NONE)?,
            corpus,
            train_size: get(kv, "data.train_size", 0)?,
            max_len: get(kv, "data.max_len", tagmt::textproc::MAX_SENTENCE_LEN)?,
            bpe_src_ops: get(kv, "bpe.src_ops", bpe_ops)?,
            bpe_tgt_ops: get(kv, "bpe.tgt_ops", bpe_ops)?,
            model,
            training,
            beam: get(kv, "decode.beam", 5)?,
            class_mask: get(kv, "decode.class_mask", true)?,
            bootstrap_iterations: get(kv, "eval.bootstrap_iterations", 1000)?,
            alpha: get(kv, "eval.alpha", 0.05)?,
            baseline_run: kv.get("baseline_run").map(PathBuf::from),
        };
        if cfg.beam == 0 {
            return Err(CliError::Config("decode.beam must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        Self::from_kv(&parse_kv(text)?)
    }

    /// Canonical key/value form; parsing it back yields an equal config.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("pair", self.pair.clone());
        put("seed", self.seed.to_string());
        put("arm", self.arm.to_string());
        match &self.corpus {
            CorpusSource::Synthetic { train, dev, test } => {
                put("corpus.kind", "synthetic".into());
                put("corpus.synthetic.train", train.to_string());
                put("corpus.synthetic.dev", dev.to_string());
                put("corpus.synthetic.test", test.to_string());
            }
            CorpusSource::Files {
                train,
                dev,
                test,
                pretokenized,
            } => {
                put("corpus.kind", "files".into());
                put("corpus.pretokenized", pretokenized.to_string());
                for (name, sp) in [("train", train), ("dev", dev), ("test", test)] {
                    put(&format!("corpus.{name}.src"), sp.src.display().to_string());
                    put(&format!("corpus.{name}.tgt"), sp.tgt.display().to_string());
                    if let Some(p) = &sp.src_conllu {
                        put(&format!("corpus.{name}.src_conllu"), p.display().to_string());
                    }
                    if let Some(p) = &sp.tgt_conllu {
                        put(&format!("corpus.{name}.tgt_conllu"), p.display().to_string());
                    }
                }
            }
        }
        put("data.train_size", self.train_size.to_string());
        put("data.max_len", self.max_len.to_string());
        put("bpe.src_ops", self.bpe_src_ops.to_string());
        put("bpe.tgt_ops", self.bpe_tgt_ops.to_string());
        for (k, v) in self.model.to_kv().into_iter().chain(self.training.to_kv()) {
            put(&k, v);
        }
        put("decode.beam", self.beam.to_string());
        put("decode.class_mask", self.class_mask.to_string());
        put("eval.bootstrap_iterations", self.bootstrap_iterations.to_string());
        put("eval.alpha", format_f64(self.alpha));
        if let Some(p) = &self.baseline_run {
            put("baseline_run", p.display().to_string());
        }
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_kv().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn family(&self) -> Family {
        self.model.family()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("# comment\n a = 1 \n\nmodel.family = transformer # trailing\n").unwrap();
        assert_eq!(kv["a"], "1");
        assert_eq!(kv["model.family"], "transformer");
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv("bad key = 1\n").is_err());
    }

    #[test]
    fn arms_roundtrip() {
        for arm in TagArm::all() {
            assert_eq!(arm.to_string().parse::<TagArm>().unwrap(), arm);
        }
        assert_eq!(TagArm::all().len(), 8);
        assert!("TL-XYZ".parse::<TagArm>().is_err());
    }

    #[test]
    fn canonical_text_roundtrip() {
        let mut cfg = ExperimentConfig::parse("arm = TL-MSD\nseed = 7\nmodel.family = recurrent\nbaseline_run = /tmp/b\n").unwrap();
        assert_eq!(cfg.training.seed, 7);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let h = cfg.hash();
        cfg.seed = 8;
        assert_ne!(cfg.hash(), h);
        assert!(ExperimentConfig::parse("typo_key = 1\n").is_err());
        assert!(ExperimentConfig::parse("model.famly = rnn\n").is_err());
        assert!(ExperimentConfig::parse("corpus.kind = files\ncorpus.train.src = a\ncorpus.train.tgt = b\ncorpus.dev.src = a\ncorpus.dev.tgt = b\ncorpus.test.src = a\ncorpus.test.tgt = b\ncorpus.test.tgt_conllu = c\n").is_ok());
    }
}
