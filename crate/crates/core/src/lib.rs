//! Link-prediction pre-training of a GCN encoder, dual low-rank adaptation
//! of its weights and adjacency, and hop-specific prompting for few-shot
//! node and graph classification.

pub mod encoder;
mod error;
pub mod graphstore;
pub mod harness;
pub mod numcore;
pub mod pretrain;
pub mod prompt;

pub use error::{Error, Result};
