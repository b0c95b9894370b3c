//! Tri-modal hybrid retrieval: dense, learned-sparse and multi-vector
//! scoring over exact indexes, weighted fusion reranking, IR evaluation,
//! and the training-side machinery (contrastive and self-distillation
//! losses, length-grouped batching) exercised through a deterministic
//! toy encoder.

pub mod batching;
pub mod cli;
pub mod corpusgen;
pub mod dense_index;
pub mod distill;
pub mod error;
pub mod evalkit;
mod io_util;
pub mod multivec;
pub mod pipeline;
pub mod scoring;
pub mod selfkd;
pub mod sparse_index;
pub mod toy_encoder;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    dot, normalize, Components, DenseEmbedding, FusionWeights, MultiVectorEmbedding, ScoredHit,
    TermWeightVector,
};
