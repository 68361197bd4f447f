use super::{EncodedPair, Vocabulary};
use crate::error::{Error, Result};

/// Right-padded, row-major id matrices plus padding masks (`true` = pad).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src: Vec<u32>,
    pub dec_input: Vec<u32>,
    pub dec_target: Vec<u32>,
    pub src_pad: Vec<bool>,
    pub tgt_pad: Vec<bool>,
}

/// Pads every sequence to the per-batch maximum.
pub fn collate_batch(pairs: &[EncodedPair]) -> Result<Batch> {
    collate_batch_padded(pairs, 0, 0)
}

/// Like [`collate_batch`] but pads to at least `min_src` / `min_tgt` positions.
pub fn collate_batch_padded(pairs: &[EncodedPair], min_src: usize, min_tgt: usize) -> Result<Batch> {
    if pairs.is_empty() {
        return Err(Error::Validation("cannot collate an empty batch".into()));
    }
    for p in pairs {
        if p.dec_input_ids.len() != p.dec_target_ids.len() {
            return Err(Error::Validation("decoder input/target lengths differ".into()));
        }
    }
    let src_len = pairs.iter().map(|p| p.src_ids.len()).max().unwrap().max(min_src);
    let tgt_len = pairs.iter().map(|p| p.dec_input_ids.len()).max().unwrap().max(min_tgt);
    let b = pairs.len();
    let mut batch = Batch {
        batch_size: b,
        src_len,
        tgt_len,
        src: vec![Vocabulary::PAD; b * src_len],
        dec_input: vec![Vocabulary::PAD; b * tgt_len],
        dec_target: vec![Vocabulary::PAD; b * tgt_len],
        src_pad: vec![true; b * src_len],
        tgt_pad: vec![true; b * tgt_len],
    };
    for (i, p) in pairs.iter().enumerate() {
        let s = i * src_len;
        batch.src[s..s + p.src_ids.len()].copy_from_slice(&p.src_ids);
        batch.src_pad[s..s + p.src_ids.len()].fill(false);
        let t = i * tgt_len;
        let n = p.dec_input_ids.len();
        batch.dec_input[t..t + n].copy_from_slice(&p.dec_input_ids);
        batch.dec_target[t..t + n].copy_from_slice(&p.dec_target_ids);
        batch.tgt_pad[t..t + n].fill(false);
    }
    Ok(batch)
}

impl Batch {
    /// Recovers the unpadded pairs using the masks.
    pub fn unpad(&self) -> Vec<EncodedPair> {
        (0..self.batch_size)
            .map(|i| {
                let src = (i * self.src_len..(i + 1) * self.src_len).filter(|&j| !self.src_pad[j]);
                let tgt: Vec<usize> = (i * self.tgt_len..(i + 1) * self.tgt_len)
                    .filter(|&j| !self.tgt_pad[j])
                    .collect();
                EncodedPair {
                    src_ids: src.map(|j| self.src[j]).collect(),
                    dec_input_ids: tgt.iter().map(|&j| self.dec_input[j]).collect(),
                    dec_target_ids: tgt.iter().map(|&j| self.dec_target[j]).collect(),
                }
            })
            .collect()
    }

    /// Number of non-pad target positions.
    pub fn target_tokens(&self) -> usize {
        self.tgt_pad.iter().filter(|p| !**p).count()
    }
}
