//! Chunk-aware bi-encoder re-ranking for geographic addresses.
//!
//! Addresses are segmented into labeled chunks, encoded by a small character
//! transformer, and trained with two listwise losses: one on the `[CLS]`
//! dot product and an auxiliary one on per-category mean-pooled components
//! weighted by learnable per-category scalars. Inference uses the `[CLS]`
//! dot product alone.
//!
//! This crate is `no_std` (with `alloc`); file formats, the training loop and
//! the command line live in the `georank` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod chunker;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod step;
pub mod taxonomy;
pub mod train;

pub use chunker::{chunk, coarse_chunk, coarse_taxonomy, Chunk, ChunkedText, Chunker, Scheme};
pub use error::{Error, Result};
pub use objective::{AttentionWeights, FusionMode};
pub use optim::{GroupedOptimizer, OptimizerKind};
pub use step::{instance_objective, LossParts};
pub use taxonomy::{Category, CategoryId, ChunkClass, ChunkTaxonomy};
pub use train::{train, Model, TrainConfig, TrainReport};
