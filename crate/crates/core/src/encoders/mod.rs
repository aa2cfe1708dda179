//! Text → fixed-length model inputs.

mod static_table;
mod wordpiece;

use crate::corpus::SentimentClass;

pub use static_table::{
    encode_static, load_static_embeddings, load_static_embeddings_with, static_tokens,
    EmbeddingFormat, LoadEmbeddingOptions, StaticEmbeddingTable, StaticVocab,
};
pub use wordpiece::{encode_subword, TokenizerConfig, WordPieceTokenizer};

pub const DEFAULT_MAX_LEN: usize = 128;

/// A padded, fixed-length encoding. The mask is a run of 1s (real tokens)
/// followed by 0s (padding).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub label: Option<SentimentClass>,
}

impl EncodedExample {
    pub(crate) fn from_ids(mut ids: Vec<u32>, max_len: usize, pad: u32) -> Self {
        ids.truncate(max_len);
        let real = ids.len();
        ids.resize(max_len, pad);
        let mut mask = vec![1u8; real];
        mask.resize(max_len, 0);
        Self {
            token_ids: ids,
            attention_mask: mask,
            label: None,
        }
    }

    pub fn with_label(mut self, label: SentimentClass) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of unmasked positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().take_while(|&&m| m == 1).count()
    }

    pub fn real_ids(&self) -> &[u32] {
        &self.token_ids[..self.real_len()]
    }
}
