//! U-Net text segmenter: per-pixel text probability from an image.

mod train;

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
pub use crate::tensor::Mode;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub use train::{
    sample_to_input, split_indices, train_detector, train_detector_from_manifest, DetectorTrainConfig, EpochStats,
    LossHistory, TrainedDetector,
};

pub const CHECKPOINT_KIND: &str = "unet";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// `(height, width, channels)`.
    pub input_size: (usize, usize, usize),
    pub encoder_depth: usize,
    pub base_channels: usize,
    pub batch_norm: bool,
    pub dropout: f32,
    pub init_seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            input_size: (512, 512, 3),
            encoder_depth: 4,
            base_channels: 64,
            batch_norm: true,
            dropout: 0.3,
            init_seed: 0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_size;
        if self.encoder_depth == 0 {
            return Err(Error::Config("encoder_depth must be at least 1".into()));
        }
        let unit = 1usize << self.encoder_depth;
        if h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be a positive multiple of {unit} for depth {}",
                self.encoder_depth
            )));
        }
        if c != 1 && c != 3 {
            return Err(Error::Config(format!("input channels must be 1 or 3, got {c}")));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvUnit {
    w: ParamId,
    b: Option<ParamId>,
    bn: Option<(ParamId, ParamId, ParamId, ParamId)>,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    c1: ConvUnit,
    c2: ConvUnit,
}

#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    params: ParamStore,
    encoder: Vec<Block>,
    bottleneck: Block,
    /// Transposed convolution weight and bias per decoder level, deepest first.
    up: Vec<(ParamId, ParamId)>,
    decoder: Vec<Block>,
    head: (ParamId, ParamId),
}

fn conv_unit(store: &mut ParamStore, name: &str, cin: usize, cout: usize, bn: bool, rng: &mut impl Rng) -> ConvUnit {
    let fan_in = (cin * 9) as f32;
    let w = store.add_uniform(format!("{name}.weight"), &[cout, cin, 3, 3], (6.0 / fan_in).sqrt(), rng);
    if bn {
        let g = store.add(format!("{name}.bn.gamma"), Tensor::full(&[cout], 1.0));
        let b = store.add(format!("{name}.bn.beta"), Tensor::zeros(&[cout]));
        let rm = store.add_buffer(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout]));
        let rv = store.add_buffer(format!("{name}.bn.running_var"), Tensor::full(&[cout], 1.0));
        ConvUnit { w, b: None, bn: Some((g, b, rm, rv)) }
    } else {
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        ConvUnit { w, b: Some(b), bn: None }
    }
}

fn block(store: &mut ParamStore, name: &str, cin: usize, cout: usize, bn: bool, rng: &mut impl Rng) -> Block {
    Block {
        c1: conv_unit(store, &format!("{name}.conv1"), cin, cout, bn, rng),
        c2: conv_unit(store, &format!("{name}.conv2"), cout, cout, bn, rng),
    }
}

impl UNet {
    /// Fresh model with He-uniform convolution weights drawn from
    /// `config.init_seed`.
    pub fn new(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let (c0, base, bn) = (config.input_size.2, config.base_channels, config.batch_norm);
        let mut encoder = Vec::new();
        let mut cin = c0;
        for level in 0..config.encoder_depth {
            let cout = base << level;
            encoder.push(block(&mut store, &format!("enc{level}"), cin, cout, bn, &mut rng));
            cin = cout;
        }
        let deepest = base << config.encoder_depth;
        let bottleneck = block(&mut store, "bottleneck", cin, deepest, bn, &mut rng);
        let mut up = Vec::new();
        let mut decoder = Vec::new();
        let mut cin = deepest;
        for level in (0..config.encoder_depth).rev() {
            let cout = base << level;
            let bound = (6.0 / (cin * 4) as f32).sqrt();
            let w = store.add_uniform(format!("up{level}.weight"), &[cin, cout, 2, 2], bound, &mut rng);
            let b = store.add(format!("up{level}.bias"), Tensor::zeros(&[cout]));
            up.push((w, b));
            decoder.push(block(&mut store, &format!("dec{level}"), 2 * cout, cout, bn, &mut rng));
            cin = cout;
        }
        let hw = store.add_uniform("head.weight", &[1, base, 1, 1], (1.0 / base as f32).sqrt(), &mut rng);
        let hb = store.add("head.bias", Tensor::zeros(&[1]));
        Ok(UNet { config, params: store, encoder, bottleneck, up, decoder, head: (hw, hb) })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn conv_unit(&self, g: &mut Graph, x: Var, u: ConvUnit, training: bool) -> Var {
        let w = g.param(&self.params, u.w);
        let b = u.b.map(|b| g.param(&self.params, b));
        let y = g.conv2d(x, w, b, 1);
        let y = match u.bn {
            Some((gamma, beta, rm, rv)) if training => g.batch_norm_train(&self.params, y, gamma, beta, (rm, rv)),
            Some((gamma, beta, rm, rv)) => g.batch_norm_eval(&self.params, y, gamma, beta, (rm, rv)),
            None => y,
        };
        g.relu(y)
    }

    fn block(&self, g: &mut Graph, x: Var, b: Block, mode: &mut Mode) -> Var {
        let training = matches!(mode, Mode::Train(_));
        let y = self.conv_unit(g, x, b.c1, training);
        let y = self.conv_unit(g, y, b.c2, training);
        match mode {
            Mode::Train(rng) => g.dropout(y, self.config.dropout, &mut **rng),
            Mode::Eval => y,
        }
    }

    /// Logits `[N, 1, H, W]` for an input `[N, C, H, W]`.
    pub fn forward(&self, g: &mut Graph, x: Var, mut mode: Mode) -> Var {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for b in &self.encoder {
            let y = self.block(g, h, *b, &mut mode);
            skips.push(y);
            h = g.max_pool2(y);
        }
        h = self.block(g, h, self.bottleneck, &mut mode);
        for ((w, b), blk) in self.up.iter().zip(&self.decoder) {
            let (wv, bv) = (g.param(&self.params, *w), g.param(&self.params, *b));
            let u = g.conv_transpose2x2(h, wv, Some(bv));
            let skip = skips.pop().expect("one skip per level");
            let cat = g.concat_channels(skip, u);
            h = self.block(g, cat, *blk, &mut mode);
        }
        let (hw, hb) = (g.param(&self.params, self.head.0), g.param(&self.params, self.head.1));
        g.conv2d(h, hw, Some(hb), 0)
    }

    /// Sigmoid probabilities `[N, 1, H, W]` in inference mode. The input
    /// must match the configured size exactly.
    pub fn predict_batch(&self, input: Tensor) -> Result<Tensor> {
        let (h, w, c) = self.config.input_size;
        let shape = input.shape();
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(Error::Validation(format!(
                "input shape {shape:?} does not match [N, {c}, {h}, {w}]"
            )));
        }
        let mut g = Graph::inference();
        let x = g.input(input);
        let logits = self.forward(&mut g, x, Mode::Eval);
        let t = g.take_value(logits);
        let shape = t.shape().to_vec();
        let data = t.into_data().into_iter().map(sigmoid).collect();
        Ok(Tensor::new(&shape, data))
    }

    pub fn to_checkpoint(&self, epoch: usize, best_val_loss: f64) -> Checkpoint {
        Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::json!({
                "config": self.config,
                "epoch": epoch,
                "best_val_loss": best_val_loss,
            }),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, origin: &Path) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND, origin)?;
        let config: UNetConfig = serde_json::from_value(ck.meta["config"].clone())
            .map_err(|e| Error::format(origin, format!("bad detector config: {e}")))?;
        let mut model = UNet::new(config)?;
        model.params.copy_values_from(&ck.params).map_err(|e| Error::format(origin, e))?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Decodes any supported image file as RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path).map(|i| i.to_rgb8()).map_err(|e| Error::format(path, e.to_string()))
}

/// Per-pixel text probabilities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl ProbabilityMask {
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }
}

/// `[1, C, H, W]` tensor of the image scaled to `[0, 1]`. One channel reads
/// the red plane (grayscale canvases carry equal planes).
pub fn image_to_tensor(image: &RgbImage, channels: usize) -> Tensor {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut data = vec![0.0; channels * h * w];
    for (x, y, p) in image.enumerate_pixels() {
        for c in 0..channels {
            data[c * h * w + y as usize * w + x as usize] = p[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[1, channels, h, w], data)
}

/// Probability map at the image's own resolution. Other sizes are resized
/// bilinearly to the model input, predicted, and mapped back with
/// nearest-neighbor sampling.
pub fn predict_mask(model: &UNet, image: &RgbImage) -> Result<ProbabilityMask> {
    let (h, w, c) = model.config.input_size;
    let (iw, ih) = image.dimensions();
    if iw == 0 || ih == 0 {
        return Err(Error::Validation("empty image".into()));
    }
    let resized;
    let input = if (iw as usize, ih as usize) == (w, h) {
        image
    } else {
        resized = image::imageops::resize(image, w as u32, h as u32, image::imageops::FilterType::Triangle);
        &resized
    };
    let probs = model.predict_batch(image_to_tensor(input, c))?;
    let p = probs.data();
    if (iw as usize, ih as usize) == (w, h) {
        return Ok(ProbabilityMask { width: iw, height: ih, data: p.to_vec() });
    }
    let mut data = Vec::with_capacity((iw * ih) as usize);
    for y in 0..ih as usize {
        let sy = ((y as f64 + 0.5) * h as f64 / ih as f64) as usize;
        for x in 0..iw as usize {
            let sx = ((x as f64 + 0.5) * w as f64 / iw as f64) as usize;
            data.push(p[sy.min(h - 1) * w + sx.min(w - 1)]);
        }
    }
    Ok(ProbabilityMask { width: iw, height: ih, data })
}

/// 255 where the probability reaches `threshold`, else 0.
pub fn binarize_mask(prob: &ProbabilityMask, threshold: f32) -> Result<GrayImage> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Validation(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(GrayImage::from_fn(prob.width, prob.height, |x, y| {
        Luma([if prob.get(x, y) >= threshold { 255 } else { 0 }])
    }))
}

/// Intersection over union of the foreground of two binary masks; 1 when
/// both are empty.
pub fn mask_iou(a: &GrayImage, b: &GrayImage) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for (p, q) in a.pixels().zip(b.pixels()) {
        let (x, y) = (p[0] != 0, q[0] != 0);
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(h: usize, w: usize, depth: usize) -> UNetConfig {
        UNetConfig { input_size: (h, w, 3), encoder_depth: depth, base_channels: 4, dropout: 0.3, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        assert!(UNetConfig::default().validate().is_ok());
        assert!(UNetConfig { input_size: (500, 500, 3), ..Default::default() }.validate().is_err());
        assert!(UNetConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
        assert!(UNetConfig { encoder_depth: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn shape_preserved_and_bottleneck_is_one_pixel() {
        let m = UNet::new(tiny(16, 32, 4)).unwrap();
        let p = m.predict_batch(Tensor::full(&[2, 3, 16, 32], 0.3)).unwrap();
        assert_eq!(p.shape(), &[2, 1, 16, 32]);
        assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mut g = Graph::inference();
        let x = g.input(Tensor::zeros(&[1, 3, 16, 16]));
        let mut h = x;
        for b in &m.encoder {
            let y = m.block(&mut g, h, *b, &mut Mode::Eval);
            h = g.max_pool2(y);
        }
        assert_eq!(g.shape(h), &[1, 4 * 8, 1, 1]);
        assert!(m.predict_batch(Tensor::zeros(&[1, 3, 16, 16])).is_err());
    }

    #[test]
    fn zero_weights_give_half() {
        let mut m = UNet::new(tiny(16, 16, 2)).unwrap();
        let ids: Vec<_> = m.params.ids().collect();
        for id in ids {
            if m.params.is_trainable(id) {
                let shape = m.params.get(id).shape().to_vec();
                m.params.set(id, Tensor::zeros(&shape));
            }
        }
        let img = RgbImage::from_fn(16, 16, |x, y| image::Rgb([x as u8 * 9, y as u8 * 7, 3]));
        let p = predict_mask(&m, &img).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.5));
        assert_eq!(p, predict_mask(&m, &img).unwrap());
        let big = RgbImage::new(40, 24);
        let q = predict_mask(&m, &big).unwrap();
        assert_eq!((q.width, q.height), (40, 24));
    }

    #[test]
    fn binarize_boundaries() {
        let half = ProbabilityMask { width: 3, height: 2, data: vec![0.5; 6] };
        assert!(binarize_mask(&half, 0.5).unwrap().pixels().all(|p| p[0] == 255));
        let below = ProbabilityMask { width: 3, height: 2, data: vec![0.49; 6] };
        assert!(binarize_mask(&below, 0.5).unwrap().pixels().all(|p| p[0] == 0));
        assert!(binarize_mask(&half, 1.0).is_err());
        let r = ProbabilityMask { width: 4, height: 1, data: vec![0.1, 0.7, 0.5, 0.2] };
        let once = binarize_mask(&r, 0.5).unwrap();
        let again = ProbabilityMask {
            width: 4,
            height: 1,
            data: once.pixels().map(|p| p[0] as f32 / 255.0).collect(),
        };
        assert_eq!(binarize_mask(&again, 0.5).unwrap(), once);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = UNet::new(tiny(16, 16, 2)).unwrap();
        let ck = m.to_checkpoint(2, 0.25);
        let bytes = ck.to_bytes().unwrap();
        let back = UNet::from_checkpoint(&Checkpoint::from_bytes(&bytes, Path::new("m")).unwrap(), Path::new("m")).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.to_checkpoint(2, 0.25).to_bytes().unwrap(), bytes);
    }
}
