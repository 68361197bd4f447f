use image::{GrayImage, Luma, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SyntheticSample;
use crate::error::{Error, Result};
use crate::regions::BoundingBox;

/// Largest rotation bound accepted by [`AugmentConfig`].
pub const MAX_ROTATION_DEG: f32 = 45.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticConfig {
    /// Peak displacement in pixels.
    pub alpha: f32,
    /// Gaussian smoothing of the displacement noise, in pixels.
    pub sigma: f32,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        ElasticConfig { alpha: 8.0, sigma: 6.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Angles are drawn uniformly from `[-bound, bound]`; 0 disables.
    pub rotation_deg: f32,
    /// Strength in `[0, 1]` of brightness and contrast jitter; 0 disables.
    pub color_jitter: f32,
    pub elastic_prob: f64,
    pub elastic: ElasticConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip_prob: 0.5,
            vflip_prob: 0.1,
            rotation_deg: 8.0,
            color_jitter: 0.3,
            elastic_prob: 0.3,
            elastic: ElasticConfig::default(),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            rotation_deg: 0.0,
            color_jitter: 0.0,
            elastic_prob: 0.0,
            elastic: ElasticConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.hflip_prob) || !prob_ok(self.vflip_prob) || !prob_ok(self.elastic_prob) {
            return Err(Error::Validation("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..=MAX_ROTATION_DEG).contains(&self.rotation_deg) {
            return Err(Error::Validation(format!(
                "rotation bound {} outside [0, {MAX_ROTATION_DEG}]",
                self.rotation_deg
            )));
        }
        if !(0.0..=1.0).contains(&self.color_jitter) {
            return Err(Error::Validation("color_jitter must lie in [0, 1]".into()));
        }
        if self.elastic.alpha < 0.0 || self.elastic.sigma <= 0.0 {
            return Err(Error::Validation("elastic alpha must be >= 0 and sigma > 0".into()));
        }
        Ok(())
    }
}

/// Random flips, rotation, elastic warp and color jitter. Geometric steps
/// move image, mask and word boxes together; jitter touches the image only.
pub fn augment_sample(sample: &SyntheticSample, rng: &mut impl Rng, aug: &AugmentConfig) -> Result<SyntheticSample> {
    aug.validate()?;
    let mut s = sample.clone();
    if rng.random_bool(aug.hflip_prob) {
        s = flip_horizontal(&s);
    }
    if rng.random_bool(aug.vflip_prob) {
        s = flip_vertical(&s);
    }
    if aug.rotation_deg > 0.0 {
        let angle = rng.random_range(-aug.rotation_deg..=aug.rotation_deg);
        s = rotate(&s, angle, aug.rotation_deg)?;
    }
    if rng.random_bool(aug.elastic_prob) {
        s = elastic(&s, aug.elastic, rng)?;
    }
    if aug.color_jitter > 0.0 {
        s = color_jitter(&s, aug.color_jitter, rng);
    }
    Ok(s)
}

pub fn flip_horizontal(s: &SyntheticSample) -> SyntheticSample {
    let w = s.image.width();
    SyntheticSample {
        image: image::imageops::flip_horizontal(&s.image),
        mask: image::imageops::flip_horizontal(&s.mask),
        word_boxes: s.word_boxes.iter().map(|b| BoundingBox { x: w - b.x - b.w, ..*b }).collect(),
        ..s.clone()
    }
}

pub fn flip_vertical(s: &SyntheticSample) -> SyntheticSample {
    let h = s.image.height();
    SyntheticSample {
        image: image::imageops::flip_vertical(&s.image),
        mask: image::imageops::flip_vertical(&s.mask),
        word_boxes: s.word_boxes.iter().map(|b| BoundingBox { y: h - b.y - b.h, ..*b }).collect(),
        ..s.clone()
    }
}

/// Rotation by `angle_deg` about the image center; `|angle_deg|` must not
/// exceed `bound_deg`.
pub fn rotate(s: &SyntheticSample, angle_deg: f32, bound_deg: f32) -> Result<SyntheticSample> {
    if !angle_deg.is_finite() || angle_deg.abs() > bound_deg {
        return Err(Error::Validation(format!("rotation {angle_deg} exceeds bound {bound_deg}")));
    }
    let (w, h) = s.image.dimensions();
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    Ok(warp(s, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
    }))
}

/// Smooth random displacement field: uniform noise blurred by `sigma`,
/// rescaled so the largest displacement component equals `alpha`.
pub fn elastic(s: &SyntheticSample, cfg: ElasticConfig, rng: &mut impl Rng) -> Result<SyntheticSample> {
    if cfg.alpha < 0.0 || cfg.sigma <= 0.0 {
        return Err(Error::Validation("elastic alpha must be >= 0 and sigma > 0".into()));
    }
    let (w, h) = (s.image.width() as usize, s.image.height() as usize);
    let field = |rng: &mut dyn rand::RngCore| {
        let noise: Vec<f32> = (0..w * h).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
        let mut f = gaussian_blur(&noise, w, h, cfg.sigma);
        let peak = f.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let k = if peak > 0.0 { cfg.alpha / peak } else { 0.0 };
        f.iter_mut().for_each(|v| *v *= k);
        f
    };
    let dx = field(rng);
    let dy = field(rng);
    Ok(warp(s, |x, y| {
        let i = y as usize * w + x as usize;
        (x + dx[i], y + dy[i])
    }))
}

pub fn color_jitter(s: &SyntheticSample, strength: f32, rng: &mut impl Rng) -> SyntheticSample {
    let brightness = rng.random_range(-64.0 * strength..=64.0 * strength);
    let contrast = rng.random_range(1.0 - strength / 2.0..=1.0 + strength / 2.0);
    let mut image = s.image.clone();
    for p in image.pixels_mut() {
        for c in p.0.iter_mut() {
            *c = ((*c as f32 - 128.0) * contrast + 128.0 + brightness).round().clamp(0.0, 255.0) as u8;
        }
    }
    SyntheticSample { image, ..s.clone() }
}

fn gaussian_blur(src: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f32 = kernel.iter().sum();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + clampi(x as isize + k as isize - r, w)])
                .sum::<f32>()
                / norm;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clampi(y as isize + k as isize - r, h) * w + x])
                .sum::<f32>()
                / norm;
        }
    }
    out
}

/// Resamples through the inverse map `inv(x, y) -> (source x, source y)`:
/// bilinear with edge clamping for the image, nearest with zero fill for the
/// mask. Each word box becomes the extent of output ink whose source pixel
/// lies in the original box; a word with no surviving ink keeps its box.
fn warp(s: &SyntheticSample, inv: impl Fn(f32, f32) -> (f32, f32)) -> SyntheticSample {
    let (w, h) = s.image.dimensions();
    let mut image = RgbImage::new(w, h);
    let mut mask = GrayImage::new(w, h);
    let mut ext: Vec<Option<(u32, u32, u32, u32)>> = vec![None; s.word_boxes.len()];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv(x as f32, y as f32);
            image.put_pixel(x, y, bilinear(&s.image, sx, sy));
            let (nx, ny) = (sx.round(), sy.round());
            if nx < 0.0 || ny < 0.0 || nx >= w as f32 || ny >= h as f32 {
                continue;
            }
            let (nx, ny) = (nx as u32, ny as u32);
            if s.mask.get_pixel(nx, ny)[0] == 0 {
                continue;
            }
            mask.put_pixel(x, y, Luma([255]));
            if let Some(k) = s.word_boxes.iter().position(|b| b.contains(nx, ny)) {
                ext[k] = Some(match ext[k] {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
    }
    let word_boxes = ext
        .iter()
        .zip(&s.word_boxes)
        .map(|(e, orig)| e.map_or(*orig, |(a, b, c, d)| BoundingBox::from_extents(a, b, c, d)))
        .collect();
    SyntheticSample { image, mask, word_boxes, ..s.clone() }
}

fn bilinear(img: &RgbImage, x: f32, y: f32) -> image::Rgb<u8> {
    let (w, h) = (img.width() as f32, img.height() as f32);
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |xx: u32, yy: u32| img.get_pixel(xx, yy)[c] as f32;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        *o = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    image::Rgb(out)
}
