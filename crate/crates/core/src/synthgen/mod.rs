//! Seeded multilingual text images with pixel-aligned ink masks, labels and
//! per-word ground-truth boxes.

pub mod augment;
mod dataset;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ab_glyph::{point, Font, FontVec, PxScale, ScaleFont};
use image::{GrayImage, Luma, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::Language;
use crate::regions::BoundingBox;

pub use augment::{augment_sample, AugmentConfig, ElasticConfig};
pub use dataset::{generate_dataset, load_manifest, load_sample, DatasetManifest, ManifestRecord, MANIFEST_FILE};

/// Glyph coverage (out of 255) at which a pixel counts as ink.
pub const INK_THRESHOLD: u8 = 128;
/// Font size shrink factor per retry when a phrase does not fit the canvas.
const FIT_SHRINK: f32 = 0.85;
const FIT_RETRIES: usize = 6;
/// Extra space between words on top of the font's own space advance, in em.
const WORD_GAP_EM: f32 = 0.3;
const LINE_HEIGHT_EM: f32 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanvasMode {
    #[default]
    Grayscale,
    Rgb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    #[default]
    Flat,
    Textured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub languages: Vec<Language>,
    pub wordlists: BTreeMap<Language, Vec<String>>,
    pub fonts: BTreeMap<Language, PathBuf>,
    pub font_size_range: (f32, f32),
    pub canvas_mode: CanvasMode,
    pub background_mode: BackgroundMode,
    pub max_words: usize,
    pub seed: u64,
    /// Fixed `(width, height)`; words wrap onto lines. `None` sizes the
    /// canvas to a single line of text plus margins.
    pub canvas_size: Option<(u32, u32)>,
    pub margin: u32,
    /// Inclusive range of background intensity per channel.
    pub background_level: (u8, u8),
    /// Inclusive range of text intensity per channel.
    pub text_level: (u8, u8),
}

impl SynthConfig {
    /// All five languages with the bundled word lists and font under
    /// `assets` (`wordlists/<code>.txt`, `fonts/DejaVuSans.ttf`).
    pub fn from_assets(assets: &Path) -> Result<Self> {
        let mut wordlists = BTreeMap::new();
        let mut fonts = BTreeMap::new();
        for lang in Language::ALL {
            let path = assets.join("wordlists").join(format!("{}.txt", lang.code()));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let words = text.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect();
            wordlists.insert(lang, words);
            fonts.insert(lang, assets.join("fonts").join("DejaVuSans.ttf"));
        }
        Ok(SynthConfig {
            languages: Language::ALL.to_vec(),
            wordlists,
            fonts,
            font_size_range: (14.0, 22.0),
            canvas_mode: CanvasMode::Grayscale,
            background_mode: BackgroundMode::Flat,
            max_words: 5,
            seed: 0,
            canvas_size: Some((128, 128)),
            margin: 4,
            background_level: (180, 255),
            text_level: (0, 70),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_words == 0 {
            return Err(Error::Config("max_words must be at least 1".into()));
        }
        if self.languages.is_empty() {
            return Err(Error::Config("no languages configured".into()));
        }
        let (lo, hi) = self.font_size_range;
        if !(lo >= 6.0 && lo <= hi) {
            return Err(Error::Config(format!("font_size_range ({lo}, {hi}) must satisfy 6 <= min <= max")));
        }
        for lang in &self.languages {
            match self.wordlists.get(lang) {
                Some(w) if !w.is_empty() => {}
                _ => return Err(Error::Config(format!("no words for language {lang}"))),
            }
            if !self.fonts.contains_key(lang) {
                return Err(Error::Config(format!("no font for language {lang}")));
            }
        }
        if self.background_level.0 > self.background_level.1 || self.text_level.0 > self.text_level.1 {
            return Err(Error::Config("intensity ranges must satisfy min <= max".into()));
        }
        if let Some((w, h)) = self.canvas_size {
            if w <= 2 * self.margin || h <= 2 * self.margin {
                return Err(Error::Config(format!("canvas {w}x{h} leaves no room inside margin {}", self.margin)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// Grayscale canvases carry equal channels.
    pub image: RgbImage,
    /// 255 on ink, 0 elsewhere.
    pub mask: GrayImage,
    pub text: String,
    pub language: Language,
    /// Ink extents of each word, in text order.
    pub word_boxes: Vec<BoundingBox>,
    pub sample_id: u64,
    pub canvas_mode: CanvasMode,
}

/// `1..=max_words` words drawn uniformly (with replacement) from the
/// language's word list.
pub fn sample_phrase(rng: &mut impl Rng, language: Language, config: &SynthConfig) -> Result<String> {
    if !config.languages.contains(&language) {
        return Err(Error::Config(format!("language {language} is not configured")));
    }
    let words = config
        .wordlists
        .get(&language)
        .filter(|w| !w.is_empty())
        .ok_or_else(|| Error::Config(format!("no words for language {language}")))?;
    let n = rng.random_range(1..=config.max_words.max(1));
    let picked: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())].as_str()).collect();
    Ok(picked.join(" "))
}

/// Holds the loaded fonts for a configuration.
pub struct Synthesizer {
    config: SynthConfig,
    fonts: BTreeMap<Language, Arc<FontVec>>,
}

struct Layout {
    size: f32,
    /// Per word: pen origin `(x, baseline)`.
    origins: Vec<(f32, f32)>,
    width: u32,
    height: u32,
}

impl Synthesizer {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut cache: BTreeMap<PathBuf, Arc<FontVec>> = BTreeMap::new();
        let mut fonts = BTreeMap::new();
        for lang in &config.languages {
            let path = &config.fonts[lang];
            if !cache.contains_key(path) {
                let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                let font = FontVec::try_from_vec(bytes)
                    .map_err(|e| Error::Font(format!("{}: {e}", path.display())))?;
                cache.insert(path.clone(), Arc::new(font));
            }
            fonts.insert(*lang, cache[path].clone());
        }
        Ok(Synthesizer { config, fonts })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Sample `i`, a pure function of `(config.seed, i)`.
    pub fn sample(&self, i: u64) -> Result<SyntheticSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(i);
        let lang = self.config.languages[rng.random_range(0..self.config.languages.len())];
        let phrase = sample_phrase(&mut rng, lang, &self.config)?;
        let mut s = self.render_sample(&phrase, lang, &mut rng)?;
        s.sample_id = i;
        Ok(s)
    }

    fn word_width(font: &FontVec, size: f32, word: &str) -> f32 {
        let sf = font.as_scaled(PxScale::from(size));
        let mut pen = 0.0;
        let mut prev = None;
        for c in word.chars() {
            let id = sf.glyph_id(c);
            if let Some(p) = prev {
                pen += sf.kern(p, id);
            }
            pen += sf.h_advance(id);
            prev = Some(id);
        }
        pen
    }

    fn layout(&self, font: &FontVec, words: &[&str], size: f32, rng: &mut impl Rng) -> Option<Layout> {
        let sf = font.as_scaled(PxScale::from(size));
        let gap = sf.h_advance(sf.glyph_id(' ')) + WORD_GAP_EM * size;
        let widths: Vec<f32> = words.iter().map(|w| Self::word_width(font, size, w)).collect();
        let (ascent, descent) = (sf.ascent(), sf.descent());
        let line_h = LINE_HEIGHT_EM * size;
        let margin = self.config.margin as f32;
        match self.config.canvas_size {
            None => {
                let text_w: f32 = widths.iter().sum::<f32>() + gap * (words.len() - 1) as f32;
                let width = (text_w + 2.0 * margin).ceil() as u32;
                let height = (ascent - descent + 2.0 * margin).ceil() as u32;
                let mut x = margin;
                let origins = widths
                    .iter()
                    .map(|w| {
                        let o = (x, margin + ascent);
                        x += w + gap;
                        o
                    })
                    .collect();
                Some(Layout { size, origins, width, height })
            }
            Some((cw, ch)) => {
                let avail = cw as f32 - 2.0 * margin;
                let mut lines: Vec<Vec<usize>> = vec![vec![]];
                let mut line_w = 0.0f32;
                for (i, &w) in widths.iter().enumerate() {
                    if w > avail {
                        return None;
                    }
                    let cur = lines.last_mut().unwrap();
                    if !cur.is_empty() && line_w + gap + w > avail {
                        lines.push(vec![i]);
                        line_w = w;
                    } else {
                        line_w += if cur.is_empty() { w } else { gap + w };
                        cur.push(i);
                    }
                }
                let block_h = ascent - descent + (lines.len() - 1) as f32 * line_h;
                if block_h > ch as f32 - 2.0 * margin {
                    return None;
                }
                let block_w = lines
                    .iter()
                    .map(|l| l.iter().map(|&i| widths[i]).sum::<f32>() + gap * (l.len() - 1) as f32)
                    .fold(0.0f32, f32::max);
                let x0 = margin + rng.random_range(0.0..=(avail - block_w).max(0.0)).floor();
                let y0 = margin + rng.random_range(0.0..=(ch as f32 - 2.0 * margin - block_h).max(0.0)).floor();
                let mut origins = vec![(0.0, 0.0); words.len()];
                for (li, line) in lines.iter().enumerate() {
                    let mut x = x0;
                    for &i in line {
                        origins[i] = (x, y0 + ascent + li as f32 * line_h);
                        x += widths[i] + gap;
                    }
                }
                Some(Layout { size, origins, width: cw, height: ch })
            }
        }
    }

    fn background(&self, width: u32, height: u32, rng: &mut impl Rng) -> ([u8; 3], [u8; 3], Vec<[f32; 3]>) {
        let gray = self.config.canvas_mode == CanvasMode::Grayscale;
        let mut pick = |(lo, hi): (u8, u8)| -> [u8; 3] {
            if gray {
                [rng.random_range(lo..=hi); 3]
            } else {
                [rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)]
            }
        };
        let bg = pick(self.config.background_level);
        let fg = pick(self.config.text_level);
        let mut field = vec![[bg[0] as f32, bg[1] as f32, bg[2] as f32]; (width * height) as usize];
        if self.config.background_mode == BackgroundMode::Textured {
            const CELL: u32 = 16;
            const AMP: f32 = 24.0;
            let gw = width / CELL + 2;
            let gh = height / CELL + 2;
            let grid: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-AMP..=AMP)).collect();
            for y in 0..height {
                for x in 0..width {
                    let (gx, gy) = (x as f32 / CELL as f32, y as f32 / CELL as f32);
                    let (ix, iy) = (gx as u32, gy as u32);
                    let (fx, fy) = (gx - ix as f32, gy - iy as f32);
                    let at = |a: u32, b: u32| grid[(b * gw + a) as usize];
                    let n = at(ix, iy) * (1.0 - fx) * (1.0 - fy)
                        + at(ix + 1, iy) * fx * (1.0 - fy)
                        + at(ix, iy + 1) * (1.0 - fx) * fy
                        + at(ix + 1, iy + 1) * fx * fy;
                    let p = &mut field[(y * width + x) as usize];
                    for c in p.iter_mut() {
                        *c = (*c + n).clamp(0.0, 255.0);
                    }
                }
            }
        }
        (bg, fg, field)
    }

    /// Renders `phrase`, shrinking the font until it fits the canvas.
    pub fn render_sample(&self, phrase: &str, language: Language, rng: &mut impl Rng) -> Result<SyntheticSample> {
        let words: Vec<&str> = phrase.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::Validation("cannot render an empty phrase".into()));
        }
        let font = self
            .fonts
            .get(&language)
            .ok_or_else(|| Error::Config(format!("no font loaded for {language}")))?;
        let (lo, hi) = self.config.font_size_range;
        let mut size = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let mut layout = None;
        for _ in 0..=FIT_RETRIES {
            layout = self.layout(font, &words, size, rng);
            if layout.is_some() {
                break;
            }
            size *= FIT_SHRINK;
        }
        let layout = layout.ok_or_else(|| {
            Error::Validation(format!("phrase {phrase:?} does not fit the canvas after {FIT_RETRIES} retries"))
        })?;
        let (w, h) = (layout.width, layout.height);
        let mut ink = vec![0u8; (w * h) as usize];
        let mut boxes = Vec::with_capacity(words.len());
        let scale = PxScale::from(layout.size);
        let sf = font.as_scaled(scale);
        for (word, &(ox, base)) in words.iter().zip(&layout.origins) {
            let mut ext: Option<(u32, u32, u32, u32)> = None;
            let mut pen = ox;
            let mut prev = None;
            for c in word.chars() {
                let id = sf.glyph_id(c);
                if let Some(p) = prev {
                    pen += sf.kern(p, id);
                }
                let glyph = id.with_scale_and_position(scale, point(pen, base));
                pen += sf.h_advance(id);
                prev = Some(id);
                let Some(outline) = font.outline_glyph(glyph) else { continue };
                let bounds = outline.px_bounds();
                outline.draw(|gx, gy, cov| {
                    let x = bounds.min.x as i32 + gx as i32;
                    let y = bounds.min.y as i32 + gy as i32;
                    if x < 0 || y < 0 || x >= w as i32 || y >= h as i32 {
                        return;
                    }
                    let v = (cov.clamp(0.0, 1.0) * 255.0).round() as u8;
                    let p = &mut ink[(y as u32 * w + x as u32) as usize];
                    *p = (*p).max(v);
                    if v >= INK_THRESHOLD {
                        let (x, y) = (x as u32, y as u32);
                        ext = Some(match ext {
                            None => (x, y, x, y),
                            Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                        });
                    }
                });
            }
            let (x0, y0, x1, y1) =
                ext.ok_or_else(|| Error::Validation(format!("word {word:?} rendered no ink at {:.1}px", layout.size)))?;
            boxes.push(BoundingBox::from_extents(x0, y0, x1, y1));
        }
        let (_, fg, field) = self.background(w, h, rng);
        let image = RgbImage::from_fn(w, h, |x, y| {
            let i = (y * w + x) as usize;
            let a = ink[i] as u32;
            let bg = field[i];
            let mut px = [0u8; 3];
            for c in 0..3 {
                let b = bg[c].round() as u32;
                px[c] = ((b * (255 - a) + fg[c] as u32 * a + 127) / 255) as u8;
            }
            image::Rgb(px)
        });
        let mask = GrayImage::from_fn(w, h, |x, y| Luma([if ink[(y * w + x) as usize] >= INK_THRESHOLD { 255 } else { 0 }]));
        Ok(SyntheticSample {
            image,
            mask,
            text: words.join(" "),
            language,
            word_boxes: boxes,
            sample_id: 0,
            canvas_mode: self.config.canvas_mode,
        })
    }
}
