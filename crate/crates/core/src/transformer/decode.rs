use std::path::Path;

use super::{Transformer, VocabRef};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::lang::Language;
use crate::nmtdata::{decode_tokens, tokenize, Vocabulary};
use crate::tensor::{Graph, Mode, Tensor};

/// Anything that can score the next target token given a source and a prefix.
pub trait StepModel {
    type Memory;

    fn encode_source(&self, src_ids: &[u32]) -> Result<Self::Memory>;

    /// Logits over the target vocabulary for the token after `prefix`.
    fn next_logits(&self, memory: &Self::Memory, prefix: &[u32]) -> Result<Vec<f32>>;

    /// Longest decoder input the model accepts.
    fn max_decoder_len(&self) -> usize {
        usize::MAX
    }
}

/// Greedy argmax decoding from `[sos, tgt_tag]`. Returns `[tgt_tag, …]`,
/// ending in `eos` when one was produced; never longer than `max_len`.
/// Ties go to the lowest index.
pub fn greedy_decode<M: StepModel>(model: &M, src_ids: &[u32], tgt_tag: u32, max_len: usize) -> Result<Vec<u32>> {
    if max_len == 0 || max_len > model.max_decoder_len() {
        return Err(Error::Validation(format!(
            "max_len {max_len} outside 1..={}",
            model.max_decoder_len()
        )));
    }
    let memory = model.encode_source(src_ids)?;
    let mut prefix = vec![Vocabulary::SOS, tgt_tag];
    while prefix.len() <= max_len {
        let logits = model.next_logits(&memory, &prefix)?;
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        prefix.push(best as u32);
        if best as u32 == Vocabulary::EOS {
            break;
        }
    }
    prefix.remove(0);
    Ok(prefix)
}

/// Encoder output for a single source sequence.
pub struct EncodedSource {
    memory: Tensor,
    src_pad: Vec<bool>,
}

impl StepModel for Transformer {
    type Memory = EncodedSource;

    fn encode_source(&self, src_ids: &[u32]) -> Result<EncodedSource> {
        let mut g = Graph::inference();
        let pad = vec![false; src_ids.len()];
        let m = self.encode(&mut g, src_ids, &pad, 1, src_ids.len(), &mut Mode::Eval)?;
        Ok(EncodedSource { memory: g.take_value(m), src_pad: pad })
    }

    fn next_logits(&self, memory: &EncodedSource, prefix: &[u32]) -> Result<Vec<f32>> {
        let mut g = Graph::inference();
        let m = g.input(memory.memory.clone());
        let t = prefix.len();
        let pad = vec![false; t];
        let logits = self.decode(&mut g, m, &memory.src_pad, prefix, &pad, 1, t, &mut Mode::Eval)?;
        let v = self.tgt_vocab_size();
        let data = g.take_value(logits).into_data();
        Ok(data[(t - 1) * v..t * v].to_vec())
    }

    fn max_decoder_len(&self) -> usize {
        self.config().max_seq_len
    }
}

/// A trained model bundled with the vocabularies it was trained on.
#[derive(Clone, Debug)]
pub struct Translator {
    pub model: Transformer,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl Translator {
    pub fn new(model: Transformer, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Result<Self> {
        if model.src_vocab_size() != src_vocab.len() || model.tgt_vocab_size() != tgt_vocab.len() {
            return Err(Error::Validation(format!(
                "model expects vocabularies of {} and {}, got {} and {}",
                model.src_vocab_size(),
                model.tgt_vocab_size(),
                src_vocab.len(),
                tgt_vocab.len()
            )));
        }
        Ok(Translator { model, src_vocab, tgt_vocab })
    }

    /// Loads a checkpoint and both vocabularies. When the checkpoint records
    /// vocabulary hashes they must match the files given.
    pub fn load(checkpoint: &Path, src_vocab: &Path, tgt_vocab: &Path) -> Result<Self> {
        let ck = Checkpoint::load(checkpoint)?;
        let model = Transformer::from_checkpoint(&ck, checkpoint)?;
        let sv = Vocabulary::load(src_vocab)?;
        let tv = Vocabulary::load(tgt_vocab)?;
        if let Some((rs, rt)) = Transformer::vocab_refs(&ck) {
            for (r, v, p) in [(&rs, &sv, src_vocab), (&rt, &tv, tgt_vocab)] {
                if r.sha256 != v.content_hash() {
                    return Err(Error::format(
                        p,
                        format!("vocabulary hash differs from the one recorded at training time ({})", r.path),
                    ));
                }
            }
        }
        Self::new(model, sv, tv)
    }

    pub fn vocab_refs(&self, src_path: &Path, tgt_path: &Path) -> (VocabRef, VocabRef) {
        (VocabRef::new(src_path, &self.src_vocab), VocabRef::new(tgt_path, &self.tgt_vocab))
    }

    /// Decoded target ids (`[<tgt>, …, eos?]`) for `text`.
    pub fn translate_ids(&self, text: &str, src: Language, tgt: Language) -> Result<Vec<u32>> {
        let src_ids = crate::nmtdata::encode_source_text(text, src, tgt, &self.src_vocab)?;
        let max_seq = self.model.config().max_seq_len;
        if src_ids.len() > max_seq {
            return Err(Error::Validation(format!(
                "source of {} tokens exceeds max_seq_len {max_seq}",
                src_ids.len()
            )));
        }
        let tag = self.tgt_vocab.lang_id(tgt)?;
        let max_len = (2 * tokenize(text).len() + 10).min(max_seq);
        greedy_decode(&self.model, &src_ids, tag, max_len)
    }

    pub fn translate(&self, text: &str, src: Language, tgt: Language) -> Result<String> {
        let ids = self.translate_ids(text, src, tgt)?;
        decode_tokens(&ids, &self.tgt_vocab)
    }
}
