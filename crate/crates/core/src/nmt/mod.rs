//! Attentional encoder-decoder models trained from scratch.
//!
//! Two families are available: a bidirectional-GRU encoder with an attentional
//! GRU decoder, and a pre-norm Transformer. Both are built on a small
//! reverse-mode autodiff over dense `f64` matrices.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod graph;
mod model;
pub mod params;
mod recurrent;
pub mod train;
mod transformer;
pub mod vocab;

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint};
pub use config::{lr_at, Family, ModelConfig, Sizes, TrainingConfig};
pub use gradcheck::{grad_check, grad_check_batch, GradCheckReport};
pub use model::{Batch, Encoded, Model};
pub use train::{train, ParallelCorpus, StopReason, TrainOutcome, ValidationRecord};
pub use transformer::positional_encoding;
pub use vocab::Vocabulary;
