//! Learning input embeddings for tokens added to a pretrained decoder-only
//! transformer by distilling the model's own hidden states.
//!
//! The pipeline is: train or load a byte-level BPE tokenizer, pick candidate
//! words, extend the vocabulary, collect snippets that contain the new
//! words, initialise and train the new rows, then evaluate.

pub mod alignment;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod seed;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
