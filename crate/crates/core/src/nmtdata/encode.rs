use serde::{Deserialize, Serialize};

use super::{tokenize, ParallelPair, Vocabulary};
use crate::error::{Error, Result};
use crate::lang::Language;

/// A numericalized training pair.
///
/// * `src_ids`        = `[sos, <src>, tokens…, <tgt>, eos]`
/// * `dec_input_ids`  = `[sos, <tgt>, tokens…]`
/// * `dec_target_ids` = `[<tgt>, tokens…, eos]`
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub src_ids: Vec<u32>,
    pub dec_input_ids: Vec<u32>,
    pub dec_target_ids: Vec<u32>,
}

/// Source-side ids for `text`, framed by both language tags.
pub(crate) fn encode_source(
    text: &str,
    src_tag: u32,
    tgt_tag: u32,
    vocab: &Vocabulary,
) -> Vec<u32> {
    let tokens = tokenize(text);
    let mut ids = Vec::with_capacity(tokens.len() + 4);
    ids.push(Vocabulary::SOS);
    ids.push(src_tag);
    ids.extend(tokens.iter().map(|t| vocab.id_or_unk(t)));
    ids.push(tgt_tag);
    ids.push(Vocabulary::EOS);
    ids
}

/// Source-side ids for translating `text` from `src` into `tgt`.
pub fn encode_source_text(text: &str, src: Language, tgt: Language, vocab: &Vocabulary) -> Result<Vec<u32>> {
    Ok(encode_source(text, vocab.lang_id(src)?, vocab.lang_id(tgt)?, vocab))
}

pub fn encode_pair(
    pair: &ParallelPair,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<EncodedPair> {
    let src_tag = src_vocab.lang_id(pair.source_language)?;
    let tgt_tag_src = src_vocab.lang_id(pair.target_language)?;
    let tgt_tag = tgt_vocab.lang_id(pair.target_language)?;
    let src_ids = encode_source(&pair.source_text, src_tag, tgt_tag_src, src_vocab);
    let target: Vec<u32> = tokenize(&pair.target_text)
        .iter()
        .map(|t| tgt_vocab.id_or_unk(t))
        .collect();
    let mut dec_input_ids = Vec::with_capacity(target.len() + 2);
    dec_input_ids.push(Vocabulary::SOS);
    dec_input_ids.push(tgt_tag);
    dec_input_ids.extend(&target);
    let mut dec_target_ids = Vec::with_capacity(target.len() + 2);
    dec_target_ids.push(tgt_tag);
    dec_target_ids.extend(&target);
    dec_target_ids.push(Vocabulary::EOS);
    Ok(EncodedPair {
        src_ids,
        dec_input_ids,
        dec_target_ids,
    })
}

/// Inverse of encoding for display: drops `<pad>`, `<sos>`, `<eos>` and a
/// leading language tag, then joins with single spaces.
pub fn decode_tokens(ids: &[u32], vocab: &Vocabulary) -> Result<String> {
    let mut words = Vec::with_capacity(ids.len());
    for &id in ids {
        let token = vocab.token(id).ok_or_else(|| {
            Error::Validation(format!("token id {id} out of range for vocabulary of {}", vocab.len()))
        })?;
        if matches!(id, Vocabulary::PAD | Vocabulary::SOS | Vocabulary::EOS) {
            continue;
        }
        if words.is_empty() && vocab.is_lang_tag(id) {
            continue;
        }
        words.push(token);
    }
    Ok(words.join(" "))
}
