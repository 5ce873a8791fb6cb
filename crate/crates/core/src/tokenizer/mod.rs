//! Byte-level BPE tokenizer with atomic added tokens.
//!
//! [`Vocab`] is the original tokenizer: 256 byte tokens, two special tokens
//! and an ordered merge list. [`ExtendedVocab`] layers new whole tokens on
//! top of it; these are matched leftmost-longest on the raw text before the
//! remaining spans are BPE-encoded with the original merges.

mod extended;
mod select;
mod train;
mod vocab;

pub use extended::{AddedToken, ExtendOptions, ExtendedVocab};
pub use select::{select_tokens, word_initial, SelectOptions, EXCLUDED_CHARS};
pub use train::train_bpe;
pub use vocab::{pretokenize, Merge, Vocab, BOS_TEXT, PAD_TEXT};

/// Anything that maps bytes to token ids and back.
pub trait Tokenizer {
    fn encode(&self, text: &[u8]) -> Vec<u32>;

    fn decode(&self, ids: &[u32]) -> crate::Result<Vec<u8>>;

    /// Byte string of a single token.
    fn token_bytes(&self, id: u32) -> Option<&[u8]>;

    fn size(&self) -> usize;
}
