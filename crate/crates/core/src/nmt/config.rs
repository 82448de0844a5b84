//! Model and training configuration, with the published grids and recipe as
//! defaults and desk-scale presets for CPU runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// (hidden, embedding) sizes searched for the recurrent family.
pub const RECURRENT_GRID: [(usize, usize); 4] = [(1024, 512), (512, 512), (512, 256), (256, 256)];

/// (model dim, layers, heads) searched for the Transformer family.
pub const TRANSFORMER_GRID: [(usize, usize, usize); 3] = [(512, 6, 8), (256, 4, 4), (128, 2, 2)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Recurrent,
    Transformer,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recurrent" | "rnn" => Ok(Family::Recurrent),
            "transformer" => Ok(Family::Transformer),
            _ => Err(Error::config(format!("unknown model family {s:?}"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Recurrent => "recurrent",
            Family::Transformer => "transformer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sizes {
    Recurrent { hidden: usize, embedding: usize },
    Transformer { dim: usize, layers: usize, heads: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub sizes: Sizes,
    pub tied_embeddings: bool,
    pub dropout: f64,
    pub label_smoothing: f64,
}

impl ModelConfig {
    pub fn recurrent(hidden: usize, embedding: usize) -> Self {
        Self {
            sizes: Sizes::Recurrent { hidden, embedding },
            tied_embeddings: false,
            dropout: 0.1,
            label_smoothing: 0.1,
        }
    }

    pub fn transformer(dim: usize, layers: usize, heads: usize) -> Self {
        Self {
            sizes: Sizes::Transformer { dim, layers, heads },
            tied_embeddings: true,
            dropout: 0.1,
            label_smoothing: 0.1,
        }
    }

    /// CPU-sized default for each family.
    pub fn desk(family: Family) -> Self {
        match family {
            Family::Recurrent => Self::recurrent(64, 64),
            Family::Transformer => Self::transformer(64, 2, 2),
        }
    }

    pub fn family(&self) -> Family {
        match self.sizes {
            Sizes::Recurrent { .. } => Family::Recurrent,
            Sizes::Transformer { .. } => Family::Transformer,
        }
    }

    /// Whether the sizes are a point of the published grid.
    pub fn is_published_grid(&self) -> bool {
        match self.sizes {
            Sizes::Recurrent { hidden, embedding } => RECURRENT_GRID.contains(&(hidden, embedding)),
            Sizes::Transformer { dim, layers, heads } => {
                TRANSFORMER_GRID.contains(&(dim, layers, heads))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        match self.sizes {
            Sizes::Recurrent { hidden, embedding } => {
                if hidden == 0 || embedding == 0 {
                    return Err(Error::config("recurrent sizes must be positive"));
                }
            }
            Sizes::Transformer { dim, layers, heads } => {
                if dim == 0 || layers == 0 || heads == 0 || dim % heads != 0 || dim % 2 != 0 {
                    return Err(Error::config(format!(
                        "transformer sizes ({dim},{layers},{heads}) need an even dim divisible by heads"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![("model.family".to_string(), self.family().to_string())];
        match self.sizes {
            Sizes::Recurrent { hidden, embedding } => {
                kv.push(("model.hidden".into(), hidden.to_string()));
                kv.push(("model.embedding".into(), embedding.to_string()));
            }
            Sizes::Transformer { dim, layers, heads } => {
                kv.push(("model.dim".into(), dim.to_string()));
                kv.push(("model.layers".into(), layers.to_string()));
                kv.push(("model.heads".into(), heads.to_string()));
            }
        }
        kv.push(("model.tied_embeddings".into(), self.tied_embeddings.to_string()));
        kv.push(("model.dropout".into(), format_f64(self.dropout)));
        kv.push(("model.label_smoothing".into(), format_f64(self.label_smoothing)));
        kv
    }

    /// Reads `model.*` keys; missing keys fall back to the desk defaults.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let family: Family = kv
            .get("model.family")
            .map(|s| s.parse())
            .transpose()?
            .unwrap_or(Family::Transformer);
        let mut cfg = Self::desk(family);
        cfg.sizes = match (family, cfg.sizes) {
            (Family::Recurrent, Sizes::Recurrent { hidden, embedding }) => Sizes::Recurrent {
                hidden: get_or(kv, "model.hidden", hidden)?,
                embedding: get_or(kv, "model.embedding", embedding)?,
            },
            (Family::Transformer, Sizes::Transformer { dim, layers, heads }) => Sizes::Transformer {
                dim: get_or(kv, "model.dim", dim)?,
                layers: get_or(kv, "model.layers", layers)?,
                heads: get_or(kv, "model.heads", heads)?,
            },
            _ => unreachable!(),
        };
        cfg.tied_embeddings = get_or(kv, "model.tied_embeddings", cfg.tied_embeddings)?;
        cfg.dropout = get_or(kv, "model.dropout", cfg.dropout)?;
        cfg.label_smoothing = get_or(kv, "model.label_smoothing", cfg.label_smoothing)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clipping threshold; 0 disables clipping.
    pub clip_norm: f64,
    pub validate_every: usize,
    pub patience: usize,
    /// Upper bound on source plus target sub-word tokens per minibatch.
    pub token_cap: usize,
    /// Hard stop for desk runs; 0 means no limit.
    pub max_steps: usize,
    /// Dev sentences decoded for model selection; 0 means all.
    pub valid_bleu_sentences: usize,
    pub valid_beam: usize,
    pub seed: u64,
}

impl TrainingConfig {
    /// Published recipe for the given family.
    pub fn published(family: Family) -> Self {
        Self {
            base_lr: match family {
                Family::Recurrent => 0.0004,
                Family::Transformer => 0.0003,
            },
            warmup_steps: 8000,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            clip_norm: 5.0,
            validate_every: 1000,
            patience: 10,
            token_cap: 4500,
            max_steps: 0,
            valid_bleu_sentences: 0,
            valid_beam: 1,
            seed: 1,
        }
    }

    /// Short schedule for CPU runs on small corpora.
    pub fn desk(family: Family) -> Self {
        Self {
            base_lr: 0.002,
            warmup_steps: 200,
            validate_every: 200,
            patience: 3,
            token_cap: 1200,
            max_steps: 3000,
            valid_bleu_sentences: 200,
            ..Self::published(family)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("warmup_steps", self.warmup_steps),
            ("validate_every", self.validate_every),
            ("token_cap", self.token_cap),
            ("valid_beam", self.valid_beam),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("train.{name} must be positive")));
            }
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::config("train.base_lr must be positive"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("train.base_lr".into(), format_f64(self.base_lr)),
            ("train.warmup_steps".into(), self.warmup_steps.to_string()),
            ("train.adam_beta1".into(), format_f64(self.adam_beta1)),
            ("train.adam_beta2".into(), format_f64(self.adam_beta2)),
            ("train.adam_eps".into(), format_f64(self.adam_eps)),
            ("train.clip_norm".into(), format_f64(self.clip_norm)),
            ("train.validate_every".into(), self.validate_every.to_string()),
            ("train.patience".into(), self.patience.to_string()),
            ("train.token_cap".into(), self.token_cap.to_string()),
            ("train.max_steps".into(), self.max_steps.to_string()),
            ("train.valid_bleu_sentences".into(), self.valid_bleu_sentences.to_string()),
            ("train.valid_beam".into(), self.valid_beam.to_string()),
            ("train.seed".into(), self.seed.to_string()),
        ]
    }

    /// Overrides fields of `base` with any `train.*` keys present.
    pub fn from_kv(kv: &BTreeMap<String, String>, base: Self) -> Result<Self> {
        let c = Self {
            base_lr: get_or(kv, "train.base_lr", base.base_lr)?,
            warmup_steps: get_or(kv, "train.warmup_steps", base.warmup_steps)?,
            adam_beta1: get_or(kv, "train.adam_beta1", base.adam_beta1)?,
            adam_beta2: get_or(kv, "train.adam_beta2", base.adam_beta2)?,
            adam_eps: get_or(kv, "train.adam_eps", base.adam_eps)?,
            clip_norm: get_or(kv, "train.clip_norm", base.clip_norm)?,
            validate_every: get_or(kv, "train.validate_every", base.validate_every)?,
            patience: get_or(kv, "train.patience", base.patience)?,
            token_cap: get_or(kv, "train.token_cap", base.token_cap)?,
            max_steps: get_or(kv, "train.max_steps", base.max_steps)?,
            valid_bleu_sentences: get_or(kv, "train.valid_bleu_sentences", base.valid_bleu_sentences)?,
            valid_beam: get_or(kv, "train.valid_beam", base.valid_beam)?,
            seed: get_or(kv, "train.seed", base.seed)?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Inverse square root schedule with linear warmup, peaking at `base_lr` when
/// `step == warmup_steps`.
pub fn lr_at(step: usize, cfg: &TrainingConfig) -> f64 {
    let step = step.max(1) as f64;
    let warmup = cfg.warmup_steps as f64;
    cfg.base_lr * (step / warmup).min((warmup / step).sqrt())
}

/// Shortest decimal representation that parses back to the same value.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

pub(crate) fn get_or<T: FromStr>(kv: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match kv.get(key) {
        None => Ok(default),
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("invalid value {v:?} for {key}"))),
    }
}
