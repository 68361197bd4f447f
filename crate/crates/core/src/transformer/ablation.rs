use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{encode_corpus, train_translator, NmtTrainConfig};
use super::TransformerConfig;
use crate::error::{Error, Result};
use crate::history::EpochStats;
use crate::lang::Language;
use crate::nmtdata::{build_vocabularies, ParallelPair, VocabOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pairs_per_language: usize,
    pub min_val_loss: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationOptions {
    pub model: TransformerConfig,
    pub train: NmtTrainConfig,
    pub vocab: VocabOptions,
}

/// The language a pair contributes to: its non-English side, or the source
/// when neither side is English.
fn group_language(p: &ParallelPair) -> Language {
    if p.source_language == Language::En {
        p.target_language
    } else {
        p.source_language
    }
}

/// Trains one model per size from scratch on the first `size` pairs of each
/// language (after a single seeded shuffle, so subsamples are nested) and
/// reports the lowest validation loss on `heldout`. One shared vocabulary,
/// built from the largest subsample, keeps losses comparable across sizes.
pub fn run_data_ablation(
    corpus: &[ParallelPair],
    heldout: &[ParallelPair],
    sizes: &[usize],
    opts: &AblationOptions,
    observer: &mut dyn FnMut(usize, &EpochStats),
) -> Result<Vec<AblationRow>> {
    if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(format!("sizes {sizes:?} must be positive and strictly increasing")));
    }
    if heldout.is_empty() {
        return Err(Error::Validation("held-out set is empty".into()));
    }
    let mut groups: BTreeMap<Language, Vec<&ParallelPair>> = BTreeMap::new();
    for p in corpus {
        groups.entry(group_language(p)).or_default().push(p);
    }
    if groups.is_empty() {
        return Err(Error::Validation("empty corpus".into()));
    }
    let largest = *sizes.last().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.train.seed);
    for (lang, pairs) in groups.iter_mut() {
        if pairs.len() < largest {
            return Err(Error::Validation(format!(
                "{} has {} pairs, fewer than the largest size {largest}",
                lang.code(),
                pairs.len()
            )));
        }
        pairs.shuffle(&mut rng);
    }
    let subsample = |n: usize| -> Vec<ParallelPair> {
        groups.values().flat_map(|ps| ps[..n].iter().map(|p| (*p).clone())).collect()
    };
    let (src_vocab, tgt_vocab) = build_vocabularies(&subsample(largest), opts.vocab);
    let val = encode_corpus(heldout, &src_vocab, &tgt_vocab)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let train = encode_corpus(&subsample(size), &src_vocab, &tgt_vocab)?;
        let trained = train_translator(
            &train,
            &val,
            &opts.train,
            opts.model,
            src_vocab.len(),
            tgt_vocab.len(),
            &mut |s| observer(size, s),
        )?;
        let min_val_loss = trained.history.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(AblationRow { pairs_per_language: size, min_val_loss });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("pairs_per_language,min_val_loss\n");
    for r in rows {
        s.push_str(&format!("{},{:.6}\n", r.pairs_per_language, r.min_val_loss));
    }
    s
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    std::fs::write(path, ablation_csv(rows)).map_err(|e| Error::io(path, e))
}
