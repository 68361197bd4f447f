use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Transformer, TransformerConfig};
use crate::detector::split_indices;
use crate::error::{Error, Result};
use crate::history::{EpochStats, LossHistory};
use crate::nmtdata::{collate_batch, encode_pair, EncodedPair, ParallelPair, Vocabulary};
use crate::tensor::{Adam, AdamConfig, Graph, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmtTrainConfig {
    /// Fixed for the whole run; no warmup or decay.
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Used only when no validation pairs are passed in.
    pub validation_fraction: f64,
}

impl Default for NmtTrainConfig {
    fn default() -> Self {
        NmtTrainConfig { learning_rate: 1e-4, batch_size: 64, epochs: 5, seed: 0, validation_fraction: 0.1 }
    }
}

impl NmtTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedTranslator {
    /// Weights from the epoch with the lowest validation loss.
    pub model: Transformer,
    pub history: LossHistory,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn encode_corpus(pairs: &[ParallelPair], src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Result<Vec<EncodedPair>> {
    pairs.iter().map(|p| encode_pair(p, src_vocab, tgt_vocab)).collect()
}

/// Seeded train/validation split, preserving input order within each half.
pub fn split_pairs<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, val) = split_indices(items.len(), fraction, seed)?;
    Ok((
        train.iter().map(|&i| items[i].clone()).collect(),
        val.iter().map(|&i| items[i].clone()).collect(),
    ))
}

/// Token-mean eval-mode cross-entropy over `pairs`.
pub fn evaluate_loss(model: &Transformer, pairs: &[EncodedPair], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let batch = collate_batch(chunk)?;
        let mut g = Graph::inference();
        let l = model.loss(&mut g, &batch, Mode::Eval)?;
        let n = batch.target_tokens();
        total += g.value(l).data()[0] as f64 * n as f64;
        tokens += n;
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

/// Adam at a fixed rate on token-mean cross-entropy. An empty `val` is
/// replaced by a seeded split of `train`.
pub fn train_translator(
    train: &[EncodedPair],
    val: &[EncodedPair],
    cfg: &NmtTrainConfig,
    model_cfg: TransformerConfig,
    src_vocab_size: usize,
    tgt_vocab_size: usize,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedTranslator> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("empty training corpus".into()));
    }
    let (train, val) = if val.is_empty() {
        split_pairs(train, cfg.validation_fraction, cfg.seed)?
    } else {
        (train.to_vec(), val.to_vec())
    };
    let mut model = Transformer::new(model_cfg, src_vocab_size, tgt_vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut history = LossHistory::default();
    let mut best: Option<(usize, f64, Transformer)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut tokens = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<EncodedPair> = chunk.iter().map(|&i| train[i].clone()).collect();
            let batch = collate_batch(&items)?;
            let mut g = Graph::new();
            let loss_v = model.loss(&mut g, &batch, Mode::Train(&mut rng))?;
            let loss = g.value(loss_v).data()[0];
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {bi} ({} sequences, src_len {}, tgt_len {}, learning rate {})",
                    batch.batch_size, batch.src_len, batch.tgt_len, cfg.learning_rate
                )));
            }
            let grads = g.backward(loss_v);
            adam.step(model.params_mut(), &grads);
            let n = batch.target_tokens();
            sum += loss as f64 * n as f64;
            tokens += n;
        }
        let train_loss = sum / tokens.max(1) as f64;
        let val_loss = evaluate_loss(&model, &val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.clone()));
        }
        observer(&EpochStats { epoch, train_loss, val_loss, seconds: start.elapsed().as_secs_f64() });
    }
    let (best_epoch, best_val_loss, model) = best.expect("at least one epoch");
    Ok(TrainedTranslator { model, history, best_epoch, best_val_loss })
}
