use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::{CanvasMode, SynthConfig, Synthesizer, SyntheticSample};
use crate::error::{Error, Result};
use crate::lang::Language;
use crate::regions::BoundingBox;

pub const MANIFEST_FILE: &str = "manifest.json";

/// One generated sample; file names are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: u64,
    pub image: String,
    pub mask: String,
    pub label: String,
    pub language: Language,
    pub seed: u64,
    pub word_boxes: Vec<BoundingBox>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn write_sample(dir: &Path, s: &SyntheticSample, seed: u64, written: &mut Vec<PathBuf>) -> Result<ManifestRecord> {
    let stem = format!("synthetic_text_{}_{}", s.sample_id, s.language.code());
    let rec = ManifestRecord {
        id: s.sample_id,
        image: format!("{stem}.png"),
        mask: format!("{stem}_mask.png"),
        label: format!("{stem}.txt"),
        language: s.language,
        seed,
        word_boxes: s.word_boxes.clone(),
    };
    let image_path = dir.join(&rec.image);
    written.push(image_path.clone());
    match s.canvas_mode {
        CanvasMode::Grayscale => GrayImage::from_fn(s.image.width(), s.image.height(), |x, y| {
            Luma([s.image.get_pixel(x, y)[0]])
        })
        .save(&image_path)?,
        CanvasMode::Rgb => s.image.save(&image_path)?,
    }
    let mask_path = dir.join(&rec.mask);
    written.push(mask_path.clone());
    s.mask.save(&mask_path)?;
    let label_path = dir.join(&rec.label);
    written.push(label_path.clone());
    std::fs::write(&label_path, format!("{}\n", s.text)).map_err(|e| Error::io(&label_path, e))?;
    Ok(rec)
}

/// Writes samples `1..=n` (image, mask, label) and `manifest.json` into
/// `out_dir`. On failure every file written by this call is removed.
pub fn generate_dataset(config: &SynthConfig, n: usize, out_dir: &Path) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::Validation("dataset size must be at least 1".into()));
    }
    let synth = Synthesizer::new(config.clone())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let result = (|| {
        let mut manifest = DatasetManifest::default();
        for i in 1..=n as u64 {
            let s = synth.sample(i)?;
            manifest.records.push(write_sample(out_dir, &s, config.seed, &mut written)?);
        }
        let path = out_dir.join(MANIFEST_FILE);
        written.push(path.clone());
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    })();
    if result.is_err() {
        for p in written {
            let _ = std::fs::remove_file(p);
        }
    }
    result
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

pub fn load_sample(dir: &Path, rec: &ManifestRecord) -> Result<SyntheticSample> {
    let img = image::open(dir.join(&rec.image))?;
    let canvas_mode = match img.color().channel_count() {
        1 | 2 => CanvasMode::Grayscale,
        _ => CanvasMode::Rgb,
    };
    let mask = image::open(dir.join(&rec.mask))?.to_luma8();
    let label_path = dir.join(&rec.label);
    let text = std::fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
    let text = text.strip_suffix('\n').unwrap_or(&text).to_string();
    Ok(SyntheticSample {
        image: img.to_rgb8(),
        mask,
        text,
        language: rec.language,
        word_boxes: rec.word_boxes.clone(),
        sample_id: rec.id,
        canvas_mode,
    })
}
