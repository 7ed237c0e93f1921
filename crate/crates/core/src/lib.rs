//! Validated LLM-assisted text annotation.
//!
//! The crate covers the whole loop: render a codebook into prompts, sample
//! each text several times at non-zero temperature, aggregate the votes into a
//! modal label with a consistency score, validate against expert gold labels
//! on refinement and holdout splits, and produce the downstream outputs
//! (label audits, review queues, training exports, full-corpus labels).

pub mod engine;
pub mod eval;
pub mod model;
pub mod provider;
pub mod workflow;

pub use model::{
    AggregatedAnnotation, Codebook, Consistency, DataError, Dimension, DimensionResult, GoldRecord,
    Label, TextSample, UnresolvedReason, Vote, VoteSet,
};
