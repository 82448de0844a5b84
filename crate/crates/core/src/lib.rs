//! Interleaved word-level linguistic annotations for neural machine translation.
//!
//! The crate covers the whole experimental pipeline at desk scale:
//!
//! - [`textproc`]: tokenisation, truecasing, length filtering and seeded downsampling.
//! - [`annotate`]: CoNLL-U ingestion, DUM/POS/MSD tag rendering, interleaving and
//!   stripping, plus a synthetic annotated language pair.
//! - [`bpe`]: byte-pair encoding that keeps tags atomic.
//! - [`nmt`]: small recurrent and Transformer encoder-decoders with a hand-written
//!   reverse-mode autodiff, trained with label smoothing and an inverse square root
//!   schedule.
//! - [`decode`]: beam search with free, forced-tag, forced-word and POS-restricted modes.
//! - [`eval`]: corpus BLEU, paired bootstrap resampling and forced-decoding accuracies.
//! - [`errcat`]: word-level error classification into inflection, reordering and
//!   lexical categories.

pub mod annotate;
pub mod bpe;
pub mod decode;
pub mod errcat;
pub mod error;
pub mod eval;
pub mod nmt;
pub mod textproc;

pub use error::{Error, Result};

/// Token sequence type used throughout the pipeline.
pub type Tokens = Vec<String>;
