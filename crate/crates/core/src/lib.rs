//! Multimodal multitask network for ad understanding: a shared bottom over
//! global image features, detected-object features and word embeddings, one
//! hierarchical attention stack per task, and sigmoid multi-label heads for
//! topics and sentiments.
//!
//! Everything runs in `f64` on the CPU, one record at a time. See the
//! `deepmm` binary for the synth / train / eval / gradcheck / sweep commands.

pub mod attention;
pub mod cli;
pub mod data;
mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Task};
