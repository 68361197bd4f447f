use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{image_to_tensor, Mode, UNet, UNetConfig};
use crate::error::{Error, Result};
pub use crate::history::{EpochStats, LossHistory};
use crate::synthgen::{augment_sample, load_sample, AugmentConfig, DatasetManifest, SyntheticSample};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Applied to training samples only; `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            learning_rate: 1e-4,
            batch_size: 8,
            validation_fraction: 0.2,
            epochs: 10,
            seed: 0,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl DetectorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDetector {
    /// Weights from the epoch with the lowest validation loss.
    pub model: UNet,
    pub history: LossHistory,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Seeded shuffle of `0..n`, the first `round(n * fraction)` (at least one,
/// leaving at least one) go to validation. Both halves come back sorted.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Validation(format!("need at least 2 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Image planes `[C, H, W]` and the mask scaled to `{0, 1}`.
pub fn sample_to_input(sample: &SyntheticSample, channels: usize) -> (Vec<f32>, Vec<f32>) {
    let image = image_to_tensor(&sample.image, channels).into_data();
    let target = sample.mask.pixels().map(|p| if p[0] != 0 { 1.0 } else { 0.0 }).collect();
    (image, target)
}

fn stack(items: &[(Vec<f32>, Vec<f32>)], c: usize, h: usize, w: usize) -> (Tensor, Vec<f32>) {
    let mut x = Vec::with_capacity(items.len() * c * h * w);
    let mut t = Vec::with_capacity(items.len() * h * w);
    for (img, tgt) in items {
        x.extend_from_slice(img);
        t.extend_from_slice(tgt);
    }
    (Tensor::new(&[items.len(), c, h, w], x), t)
}

/// Mean pixel BCE of the model in inference mode.
fn evaluate_loss(model: &UNet, data: &[(Vec<f32>, Vec<f32>)], batch: usize) -> f64 {
    let (h, w, c) = model.config().input_size;
    let mut total = 0.0;
    for chunk in data.chunks(batch) {
        let (x, t) = stack(chunk, c, h, w);
        let mut g = Graph::inference();
        let xv = g.input(x);
        let logits = model.forward(&mut g, xv, Mode::Eval);
        let loss = g.bce_with_logits(logits, &t);
        total += g.value(loss).data()[0] as f64 * chunk.len() as f64;
    }
    total / data.len() as f64
}

/// Adam on pixelwise BCE. `observer` sees every finished epoch.
pub fn train_detector(
    samples: &[SyntheticSample],
    cfg: &DetectorTrainConfig,
    unet: UNetConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedDetector> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Validation("no training samples".into()));
    }
    let mut model = UNet::new(unet)?;
    let (h, w, c) = unet.input_size;
    for s in samples {
        if s.image.dimensions() != (w as u32, h as u32) || s.mask.dimensions() != s.image.dimensions() {
            return Err(Error::Validation(format!(
                "sample {} is {:?} with mask {:?}; the model expects {w}x{h}",
                s.sample_id,
                s.image.dimensions(),
                s.mask.dimensions()
            )));
        }
    }
    let (train_idx, val_idx) = split_indices(samples.len(), cfg.validation_fraction, cfg.seed)?;
    let val: Vec<_> = val_idx.iter().map(|&i| sample_to_input(&samples[i], c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut history = LossHistory::default();
    let mut best: Option<(usize, f64, UNet)> = None;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut items = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = match &cfg.augment {
                    Some(a) => augment_sample(&samples[i], &mut rng, a)?,
                    None => samples[i].clone(),
                };
                items.push(sample_to_input(&s, c));
            }
            let (x, t) = stack(&items, c, h, w);
            let mut g = Graph::new();
            let xv = g.input(x);
            let logits = model.forward(&mut g, xv, Mode::Train(&mut rng));
            let loss_v = g.bce_with_logits(logits, &t);
            let loss = g.value(loss_v).data()[0];
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {bi} (learning rate {})",
                    cfg.learning_rate
                )));
            }
            let grads = g.backward(loss_v);
            adam.step(model.params_mut(), &grads);
            for (id, value) in g.take_buffer_updates() {
                model.params_mut().set(id, value);
            }
            sum += loss as f64 * chunk.len() as f64;
        }
        let train_loss = sum / train_idx.len() as f64;
        let val_loss = evaluate_loss(&model, &val, cfg.batch_size);
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
    let (best_epoch, best_val_loss, best_model) = match best {
        Some(b) => b,
        None => (0, evaluate_loss(&model, &val, cfg.batch_size), model),
    };
    Ok(TrainedDetector {
        model: best_model,
        history,
        best_epoch,
        best_val_loss,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Loads every sample listed in a dataset directory's manifest and trains.
pub fn train_detector_from_manifest(
    dir: &Path,
    manifest: &DatasetManifest,
    cfg: &DetectorTrainConfig,
    unet: UNetConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedDetector> {
    if manifest.is_empty() {
        return Err(Error::Validation("empty manifest".into()));
    }
    let samples = manifest.records.iter().map(|r| load_sample(dir, r)).collect::<Result<Vec<_>>>()?;
    train_detector(&samples, cfg, unet, observer)
}
