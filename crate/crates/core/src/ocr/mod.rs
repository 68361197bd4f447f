//! Recognition adapter. The external binding runs the `tesseract` binary as
//! a subprocess; the mock answers from a table keyed by patch hash.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lang::Language;
use crate::regions::ImagePatch;

/// Patches shorter than this are upscaled when preprocessing is enabled.
pub const MIN_PATCH_HEIGHT: u32 = 20;
const BORDER: u32 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcrResult {
    pub text: String,
    pub confidence: Option<f64>,
    pub patch_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    External,
    Mock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognizerSpec {
    pub engine: EngineKind,
    #[serde(default)]
    pub language_hint: Option<Language>,
    /// Binary for the external engine; `tesseract` on `PATH` by default.
    #[serde(default)]
    pub engine_path: Option<PathBuf>,
    /// Page segmentation mode passed to the external engine.
    #[serde(default)]
    pub psm: Option<u32>,
    /// Upscale short patches and add a white border before recognition.
    #[serde(default)]
    pub preprocess: bool,
    /// JSON object `{patch_hash: text}` for the mock engine.
    #[serde(default)]
    pub mock_table: Option<PathBuf>,
}

impl RecognizerSpec {
    pub fn external(language_hint: Option<Language>) -> Self {
        RecognizerSpec {
            engine: EngineKind::External,
            language_hint,
            engine_path: None,
            psm: None,
            preprocess: false,
            mock_table: None,
        }
    }

    pub fn mock(table: &Path) -> Self {
        RecognizerSpec {
            engine: EngineKind::Mock,
            language_hint: None,
            engine_path: None,
            psm: None,
            preprocess: false,
            mock_table: Some(table.to_path_buf()),
        }
    }
}

pub trait Recognizer {
    /// Fails if the engine cannot run at all.
    fn health_check(&self) -> Result<String>;

    /// Raw recognition of one patch; callers normalize the text.
    fn recognize_raw(&self, patch: &ImagePatch) -> Result<(String, Option<f64>)>;
}

/// Trims and collapses every whitespace run, line breaks included, to one space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn recognize(rec: &dyn Recognizer, patch: &ImagePatch, index: usize) -> Result<OcrResult> {
    let (text, confidence) = rec.recognize_raw(patch)?;
    Ok(OcrResult { text: normalize_text(&text), confidence, patch_index: index })
}

/// Recognizes every patch in order. The engine is checked once up front; a
/// failure on an individual patch yields an empty result for that patch.
pub fn recognize_regions(rec: &dyn Recognizer, patches: &[ImagePatch]) -> Result<Vec<OcrResult>> {
    if patches.is_empty() {
        return Ok(Vec::new());
    }
    rec.health_check()?;
    Ok(patches
        .iter()
        .enumerate()
        .map(|(i, p)| {
            recognize(rec, p, i).unwrap_or(OcrResult { text: String::new(), confidence: Some(0.0), patch_index: i })
        })
        .collect())
}

pub fn build_recognizer(spec: &RecognizerSpec) -> Result<Box<dyn Recognizer>> {
    match spec.engine {
        EngineKind::External => Ok(Box::new(TesseractRecognizer::from_spec(spec))),
        EngineKind::Mock => {
            let path = spec
                .mock_table
                .as_ref()
                .ok_or_else(|| Error::Config("mock recognizer needs a lookup table".into()))?;
            Ok(Box::new(MockRecognizer::load(path)?))
        }
    }
}

/// Hex SHA-256 over the patch dimensions and raw RGB bytes.
pub fn patch_hash(image: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.as_raw());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default)]
pub struct MockRecognizer {
    table: BTreeMap<String, String>,
}

impl MockRecognizer {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        MockRecognizer { table }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(MockRecognizer { table })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.table)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn insert(&mut self, patch: &RgbImage, text: &str) {
        self.table.insert(patch_hash(patch), text.to_string());
    }
}

impl Recognizer for MockRecognizer {
    fn health_check(&self) -> Result<String> {
        Ok(format!("mock recognizer with {} entries", self.table.len()))
    }

    fn recognize_raw(&self, patch: &ImagePatch) -> Result<(String, Option<f64>)> {
        Ok(match self.table.get(&patch_hash(&patch.image)) {
            Some(t) => (t.clone(), Some(100.0)),
            None => (String::new(), Some(0.0)),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TesseractRecognizer {
    pub binary: PathBuf,
    pub language: Option<String>,
    pub psm: u32,
    pub preprocess: bool,
}

impl TesseractRecognizer {
    pub fn from_spec(spec: &RecognizerSpec) -> Self {
        TesseractRecognizer {
            binary: spec.engine_path.clone().unwrap_or_else(|| PathBuf::from("tesseract")),
            language: spec.language_hint.map(|l| l.tesseract_pack().to_string()),
            psm: spec.psm.unwrap_or(7),
            preprocess: spec.preprocess,
        }
    }
}

/// Integer upscale of short patches and a white border.
pub fn preprocess_patch(image: &RgbImage) -> RgbImage {
    let factor = if image.height() < MIN_PATCH_HEIGHT { MIN_PATCH_HEIGHT.div_ceil(image.height().max(1)) } else { 1 };
    let scaled = if factor > 1 {
        image::imageops::resize(image, image.width() * factor, image.height() * factor, image::imageops::FilterType::Nearest)
    } else {
        image.clone()
    };
    let mut out = RgbImage::from_pixel(scaled.width() + 2 * BORDER, scaled.height() + 2 * BORDER, Rgb([255, 255, 255]));
    image::imageops::replace(&mut out, &scaled, BORDER as i64, BORDER as i64);
    out
}

impl Recognizer for TesseractRecognizer {
    fn health_check(&self) -> Result<String> {
        let out = Command::new(&self.binary)
            .arg("--version")
            .output()
            .map_err(|e| Error::Engine(format!("cannot run {}: {e}", self.binary.display())))?;
        if !out.status.success() {
            return Err(Error::Engine(format!(
                "{} --version exited with {}: {}",
                self.binary.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let text = String::from_utf8_lossy(if out.stdout.is_empty() { &out.stderr } else { &out.stdout });
        Ok(text.lines().next().unwrap_or("").trim().to_string())
    }

    fn recognize_raw(&self, patch: &ImagePatch) -> Result<(String, Option<f64>)> {
        let img = if self.preprocess { preprocess_patch(&patch.image) } else { patch.image.clone() };
        let mut png = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)?;
        let mut cmd = Command::new(&self.binary);
        cmd.args(["stdin", "stdout", "--psm", &self.psm.to_string()]);
        if let Some(l) = &self.language {
            cmd.args(["-l", l]);
        }
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Engine(format!("cannot run {}: {e}", self.binary.display())))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(&png)
            .map_err(|e| Error::Engine(format!("writing patch to engine: {e}")))?;
        let out = child.wait_with_output().map_err(|e| Error::Engine(e.to_string()))?;
        if !out.status.success() {
            return Err(Error::Engine(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        Ok((String::from_utf8_lossy(&out.stdout).into_owned(), None))
    }
}
