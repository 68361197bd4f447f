//! Image-to-translation orchestration: detect text pixels, group them into
//! word boxes, recognize each crop, join the words in reading order and
//! translate the resulting sentence.

mod evaluate;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::detector::{binarize_mask, load_rgb, predict_mask, ProbabilityMask, UNet};
use crate::error::{Error, Result};
use crate::lang::Language;
use crate::ocr::{build_recognizer, recognize_regions, OcrResult, Recognizer, RecognizerSpec};
use crate::regions::{
    components_to_boxes, crop_regions, extract_components, reading_order, word_components, BoundingBox,
    Connectivity,
};
use crate::transformer::Translator;

pub use evaluate::{evaluate_end_to_end, match_boxes, EndToEndReport};

fn default_threshold() -> f32 {
    0.5
}

fn default_min_area() -> usize {
    crate::regions::DEFAULT_MIN_AREA
}

fn default_gap_x() -> u32 {
    6
}

fn default_gap_y() -> u32 {
    3
}

fn default_padding() -> u32 {
    2
}

/// JSON configuration for a full pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector_checkpoint: PathBuf,
    pub translator_checkpoint: PathBuf,
    pub src_vocab: PathBuf,
    pub tgt_vocab: PathBuf,
    pub recognizer: RecognizerSpec,
    #[serde(default = "default_threshold")]
    pub binarize_threshold: f32,
    #[serde(default = "default_min_area")]
    pub min_area: usize,
    pub source_language: Language,
    pub target_language: Language,
    /// Horizontal gap (pixels) bridged when merging glyphs into words; 0
    /// keeps plain connected components.
    #[serde(default = "default_gap_x")]
    pub word_gap_x: u32,
    #[serde(default = "default_gap_y")]
    pub word_gap_y: u32,
    #[serde(default = "default_padding")]
    pub crop_padding: u32,
    /// Translate each box on its own instead of the joined sentence.
    #[serde(default)]
    pub per_box: bool,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            binarize_threshold: self.binarize_threshold,
            min_area: self.min_area,
            word_gap: (self.word_gap_x, self.word_gap_y),
            crop_padding: self.crop_padding,
            source_language: self.source_language,
            target_language: self.target_language,
            per_box: self.per_box,
        }
    }

    /// Checks thresholds and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        let mut files = vec![
            ("detector_checkpoint", &self.detector_checkpoint),
            ("translator_checkpoint", &self.translator_checkpoint),
            ("src_vocab", &self.src_vocab),
            ("tgt_vocab", &self.tgt_vocab),
        ];
        if let Some(t) = &self.recognizer.mock_table {
            files.push(("recognizer.mock_table", t));
        }
        for (name, p) in files {
            if !p.is_file() {
                return Err(Error::Config(format!("{name} {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub binarize_threshold: f32,
    pub min_area: usize,
    pub word_gap: (u32, u32),
    pub crop_padding: u32,
    pub source_language: Language,
    pub target_language: Language,
    pub per_box: bool,
}

impl PipelineSettings {
    pub fn new(source_language: Language, target_language: Language) -> Self {
        PipelineSettings {
            binarize_threshold: default_threshold(),
            min_area: default_min_area(),
            word_gap: (default_gap_x(), default_gap_y()),
            crop_padding: default_padding(),
            source_language,
            target_language,
            per_box: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::Config(format!(
                "binarize_threshold {} outside (0, 1)",
                self.binarize_threshold
            )));
        }
        Ok(())
    }
}

/// Produces per-pixel text probabilities at the input image's size.
pub trait TextDetector {
    fn probabilities(&self, image: &RgbImage) -> Result<ProbabilityMask>;
}

impl TextDetector for UNet {
    fn probabilities(&self, image: &RgbImage) -> Result<ProbabilityMask> {
        predict_mask(self, image)
    }
}

pub trait TextTranslator {
    fn translate(&self, text: &str, src: Language, tgt: Language) -> Result<String>;
}

impl TextTranslator for Translator {
    fn translate(&self, text: &str, src: Language, tgt: Language) -> Result<String> {
        Translator::translate(self, text, src, tgt)
    }
}

/// Text-only path: empty input gives empty output without running the model.
pub fn translate_text(translator: &dyn TextTranslator, text: &str, src: Language, tgt: Language) -> Result<String> {
    let text = crate::ocr::normalize_text(text);
    if text.is_empty() {
        return Ok(String::new());
    }
    translator.translate(&text, src, tgt)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub detect_ms: f64,
    pub regions_ms: f64,
    pub recognize_ms: f64,
    pub translate_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub boxes: Vec<BoundingBox>,
    pub recognized: Vec<OcrResult>,
    pub source_text: String,
    pub translated_text: String,
    pub timings: StageTimings,
}

impl PipelineResult {
    /// The result with timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> PipelineResult {
        PipelineResult { timings: StageTimings::default(), ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Detect,
    Regions,
    Recognize,
    Translate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Detect => "detect",
            Stage::Regions => "regions",
            Stage::Recognize => "recognize",
            Stage::Translate => "translate",
        };
        f.write_str(s)
    }
}

/// A failed run: the stage that failed, why, and everything the earlier
/// stages produced.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Error,
    pub partial: PipelineResult,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<PipelineError> for Error {
    fn from(e: PipelineError) -> Self {
        Error::Stage { stage: e.stage.to_string(), source: Box::new(e.source) }
    }
}

/// Word boxes from a binary mask, in reading order.
pub fn mask_to_boxes(mask: &GrayImage, settings: &PipelineSettings) -> Result<Vec<BoundingBox>> {
    let (gx, gy) = settings.word_gap;
    let labels = if gx == 0 && gy == 0 {
        extract_components(mask, Connectivity::Eight)?
    } else {
        word_components(mask, gx, gy)?
    };
    Ok(reading_order(components_to_boxes(&labels, settings.min_area)))
}

pub struct Pipeline {
    detector: Box<dyn TextDetector>,
    recognizer: Box<dyn Recognizer>,
    translator: Box<dyn TextTranslator>,
    settings: PipelineSettings,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

impl Pipeline {
    pub fn new(
        detector: Box<dyn TextDetector>,
        recognizer: Box<dyn Recognizer>,
        translator: Box<dyn TextTranslator>,
        settings: PipelineSettings,
    ) -> Result<Self> {
        settings.validate()?;
        Ok(Pipeline { detector, recognizer, translator, settings })
    }

    /// Loads every model named in `cfg`; errors name the stage whose
    /// artifact failed to load.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let stage = |stage: Stage| move |e: Error| Error::Stage { stage: stage.to_string(), source: Box::new(e) };
        let detector = UNet::load(&cfg.detector_checkpoint).map_err(stage(Stage::Detect))?;
        let recognizer = build_recognizer(&cfg.recognizer).map_err(stage(Stage::Recognize))?;
        let translator = Translator::load(&cfg.translator_checkpoint, &cfg.src_vocab, &cfg.tgt_vocab)
            .map_err(stage(Stage::Translate))?;
        Self::new(Box::new(detector), recognizer, Box::new(translator), cfg.settings())
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn recognizer(&self) -> &dyn Recognizer {
        self.recognizer.as_ref()
    }

    pub fn translator(&self) -> &dyn TextTranslator {
        self.translator.as_ref()
    }

    /// Binary text mask at the image's resolution.
    pub fn detect_mask(&self, image: &RgbImage) -> Result<GrayImage> {
        let prob = self.detector.probabilities(image)?;
        binarize_mask(&prob, self.settings.binarize_threshold)
    }

    pub fn boxes_from_mask(&self, mask: &GrayImage) -> Result<Vec<BoundingBox>> {
        mask_to_boxes(mask, &self.settings)
    }

    /// Detection and region extraction only.
    pub fn detect_boxes(&self, image: &RgbImage) -> Result<Vec<BoundingBox>, PipelineError> {
        let mut partial = PipelineResult::default();
        self.run_boxes(image, &mut partial)
    }

    fn run_boxes(&self, image: &RgbImage, partial: &mut PipelineResult) -> Result<Vec<BoundingBox>, PipelineError> {
        let fail = |stage, source, partial: &PipelineResult| PipelineError { stage, source, partial: partial.clone() };
        let t = Instant::now();
        let mask = self.detect_mask(image).map_err(|e| fail(Stage::Detect, e, partial))?;
        partial.timings.detect_ms = ms(t);
        let t = Instant::now();
        let boxes = self.boxes_from_mask(&mask).map_err(|e| fail(Stage::Regions, e, partial))?;
        partial.timings.regions_ms = ms(t);
        Ok(boxes)
    }

    pub fn translate_image(&self, image: &RgbImage) -> Result<PipelineResult, PipelineError> {
        let mut out = PipelineResult::default();
        out.boxes = self.run_boxes(image, &mut out)?;
        let t = Instant::now();
        let patches = crop_regions(image, &out.boxes, self.settings.crop_padding);
        out.recognized = recognize_regions(self.recognizer.as_ref(), &patches)
            .map_err(|e| PipelineError { stage: Stage::Recognize, source: e, partial: out.clone() })?;
        out.timings.recognize_ms = ms(t);
        let words: Vec<&str> = out.recognized.iter().map(|r| r.text.as_str()).filter(|t| !t.is_empty()).collect();
        out.source_text = words.join(" ");
        let t = Instant::now();
        let (src, tgt) = (self.settings.source_language, self.settings.target_language);
        let translated = if self.settings.per_box {
            words
                .iter()
                .map(|w| translate_text(self.translator.as_ref(), w, src, tgt))
                .collect::<Result<Vec<_>>>()
                .map(|v| v.into_iter().filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" "))
        } else {
            translate_text(self.translator.as_ref(), &out.source_text, src, tgt)
        };
        out.translated_text =
            translated.map_err(|e| PipelineError { stage: Stage::Translate, source: e, partial: out.clone() })?;
        out.timings.translate_ms = ms(t);
        Ok(out)
    }

    pub fn translate_image_file(&self, path: &Path) -> Result<PipelineResult, PipelineError> {
        let image = load_rgb(path).map_err(|e| PipelineError {
            stage: Stage::Load,
            source: e,
            partial: PipelineResult::default(),
        })?;
        self.translate_image(&image)
    }
}

#[cfg(test)]
mod tests;
