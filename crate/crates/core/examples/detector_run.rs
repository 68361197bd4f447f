//! Desk-scale detector training run with per-epoch losses and validation IoU.
//!
//! Usage: `detector_run [epochs] [learning_rate] [dropout] [batch] [augment:0|1]`

use std::path::Path;

use doctrans_core::detector::{binarize_mask, mask_iou, predict_mask, train_detector, DetectorTrainConfig, UNetConfig};
use doctrans_core::synthgen::{SynthConfig, Synthesizer};

fn main() -> doctrans_core::Result<()> {
    let a: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| a.get(i).cloned().unwrap_or_else(|| d.to_string());
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets");
    let mut cfg = SynthConfig::from_assets(&assets)?;
    cfg.seed = 8;
    let synth = Synthesizer::new(cfg)?;
    let samples = (1..=200).map(|i| synth.sample(i)).collect::<doctrans_core::Result<Vec<_>>>()?;
    let mut tc = DetectorTrainConfig { epochs: arg(1, "10").parse().unwrap(), ..Default::default() };
    tc.learning_rate = arg(2, "1e-4").parse().unwrap();
    tc.batch_size = arg(4, "8").parse().unwrap();
    if arg(5, "1") == "0" {
        tc.augment = None;
    }
    let unet = UNetConfig {
        input_size: (128, 128, 3),
        encoder_depth: 3,
        base_channels: 16,
        dropout: arg(3, "0.3").parse().unwrap(),
        ..Default::default()
    };
    let t = train_detector(&samples, &tc, unet, &mut |e| {
        println!("epoch {} train {:.5} val {:.5} ({:.1}s)", e.epoch, e.train_loss, e.val_loss, e.seconds)
    })?;
    let ious: Vec<f64> = t
        .val_indices
        .iter()
        .map(|&i| {
            let p = predict_mask(&t.model, &samples[i].image).unwrap();
            mask_iou(&binarize_mask(&p, 0.5).unwrap(), &samples[i].mask)
        })
        .collect();
    println!("best epoch {} mean val IoU {:.4}", t.best_epoch, ious.iter().sum::<f64>() / ious.len() as f64);
    Ok(())
}
