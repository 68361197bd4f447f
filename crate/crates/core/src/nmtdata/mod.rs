//! Parallel-corpus ingestion, whitespace tokenization, source/target
//! vocabularies, language-tagged encoding and padded batch collation.

mod batch;
mod corpus;
mod encode;
pub mod synthetic;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::lang::Language;

pub use batch::{collate_batch, collate_batch_padded, Batch};
pub use corpus::{
    load_parallel_corpus, read_parallel_corpus, write_parallel_corpus, CorpusOptions,
    RejectsReport,
};
pub use encode::{decode_tokens, encode_pair, encode_source_text, EncodedPair};
pub use vocab::{build_vocabularies, VocabOptions, Vocabulary};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source_text: String,
    pub target_text: String,
    pub source_language: Language,
    pub target_language: Language,
}

impl ParallelPair {
    pub fn new(source: &str, target: &str, src: Language, tgt: Language) -> Self {
        ParallelPair {
            source_text: source.to_string(),
            target_text: target.to_string(),
            source_language: src,
            target_language: tgt,
        }
    }
}

/// Splits on runs of Unicode whitespace. No other normalization.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Optional normalization: lowercase and drop punctuation characters.
pub fn normalize(text: &str) -> String {
    const EXTRA: &[char] = &['«', '»', '„', '“', '”', '‘', '’', '…', '¿', '¡', '—', '–'];
    text.chars()
        .filter(|c| !c.is_ascii_punctuation() && !EXTRA.contains(c))
        .flat_map(char::to_lowercase)
        .collect()
}
