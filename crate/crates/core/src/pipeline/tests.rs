use std::path::PathBuf;

use image::GenericImageView;

use super::*;
use crate::regions::ImagePatch;
use crate::synthgen::{generate_dataset, load_manifest, DatasetManifest, SynthConfig, Synthesizer};

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

/// Replays a fixed mask as certain probabilities.
struct MaskDetector(Option<GrayImage>);

impl TextDetector for MaskDetector {
    fn probabilities(&self, image: &RgbImage) -> Result<ProbabilityMask> {
        let (w, h) = image.dimensions();
        let data = match &self.0 {
            Some(m) => m.pixels().map(|p| if p[0] != 0 { 1.0 } else { 0.0 }).collect(),
            None => vec![0.0; (w * h) as usize],
        };
        Ok(ProbabilityMask { width: w, height: h, data })
    }
}

/// Reads the word whose ground-truth box overlaps the patch most.
struct BoxOracle {
    boxes: Vec<BoundingBox>,
    words: Vec<String>,
}

impl Recognizer for BoxOracle {
    fn health_check(&self) -> Result<String> {
        Ok("oracle".into())
    }

    fn recognize_raw(&self, patch: &ImagePatch) -> Result<(String, Option<f64>)> {
        let best = self
            .boxes
            .iter()
            .enumerate()
            .map(|(i, b)| (b.iou(&patch.bbox), i))
            .filter(|(iou, _)| *iou > 0.0)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        Ok((best.map(|(_, i)| self.words[i].clone()).unwrap_or_default(), Some(1.0)))
    }
}

struct Identity;

impl TextTranslator for Identity {
    fn translate(&self, text: &str, _: Language, _: Language) -> Result<String> {
        Ok(text.to_string())
    }
}

struct Broken;

impl TextTranslator for Broken {
    fn translate(&self, _: &str, _: Language, _: Language) -> Result<String> {
        Err(Error::Validation("no model".into()))
    }
}

fn synth() -> Synthesizer {
    let mut cfg = SynthConfig::from_assets(&assets()).unwrap();
    cfg.languages = vec![Language::Fr];
    cfg.seed = 4;
    Synthesizer::new(cfg).unwrap()
}

fn settings() -> PipelineSettings {
    PipelineSettings::new(Language::Fr, Language::Fr)
}

#[test]
fn blank_image_gives_empty_everything() {
    let p = Pipeline::new(
        Box::new(MaskDetector(None)),
        Box::new(BoxOracle { boxes: vec![], words: vec![] }),
        Box::new(Broken),
        settings(),
    )
    .unwrap();
    let r = p.translate_image(&RgbImage::from_pixel(64, 64, image::Rgb([255, 255, 255]))).unwrap();
    assert!(r.boxes.is_empty() && r.recognized.is_empty());
    assert_eq!((r.source_text.as_str(), r.translated_text.as_str()), ("", ""));
}

#[test]
fn oracle_components_reproduce_text() {
    let s = synth();
    for i in 1..=5 {
        let sample = s.sample(i).unwrap();
        let words = sample.text.split_whitespace().map(str::to_string).collect();
        let p = Pipeline::new(
            Box::new(MaskDetector(Some(sample.mask.clone()))),
            Box::new(BoxOracle { boxes: sample.word_boxes.clone(), words }),
            Box::new(Identity),
            settings(),
        )
        .unwrap();
        let r = p.translate_image(&sample.image).unwrap();
        assert_eq!(r.recognized.len(), r.boxes.len());
        assert_eq!(r.translated_text, sample.text, "sample {i}");
        assert_eq!(p.translate_image(&sample.image).unwrap().without_timings(), r.without_timings());
    }
}

#[test]
fn per_box_mode_translates_words_separately() {
    let sample = synth().sample(2).unwrap();
    let words = sample.text.split_whitespace().map(str::to_string).collect();
    let mut cfg = settings();
    cfg.per_box = true;
    let p = Pipeline::new(
        Box::new(MaskDetector(Some(sample.mask.clone()))),
        Box::new(BoxOracle { boxes: sample.word_boxes.clone(), words }),
        Box::new(Identity),
        cfg,
    )
    .unwrap();
    assert_eq!(p.translate_image(&sample.image).unwrap().translated_text, sample.text);
}

#[test]
fn failing_stage_keeps_earlier_results() {
    let sample = synth().sample(3).unwrap();
    let words = sample.text.split_whitespace().map(str::to_string).collect();
    let p = Pipeline::new(
        Box::new(MaskDetector(Some(sample.mask.clone()))),
        Box::new(BoxOracle { boxes: sample.word_boxes.clone(), words }),
        Box::new(Broken),
        settings(),
    )
    .unwrap();
    let err = p.translate_image(&sample.image).unwrap_err();
    assert_eq!(err.stage, Stage::Translate);
    assert!(!err.partial.boxes.is_empty());
    assert_eq!(err.partial.source_text, sample.text);
    assert!(Error::from(err).to_string().starts_with("translate stage failed"));
}

#[test]
fn translate_text_empty_skips_model() {
    assert_eq!(translate_text(&Broken, "  ", Language::En, Language::Fr).unwrap(), "");
    assert!(translate_text(&Broken, "hello", Language::En, Language::Fr).is_err());
}

#[test]
fn greedy_box_matching() {
    let truth = [BoundingBox::new(0, 0, 10, 10), BoundingBox::new(20, 0, 10, 10)];
    let pred = [BoundingBox::new(0, 0, 10, 10), BoundingBox::new(1, 0, 10, 10)];
    // the second prediction overlaps only the first truth box, already taken
    assert_eq!(match_boxes(&truth, &pred), vec![1.0, 0.0]);
    assert!(match_boxes(&truth, &[]).iter().all(|&v| v == 0.0));
}

fn labels(dir: &Path) -> (DatasetManifest, Vec<String>) {
    let m = load_manifest(dir).unwrap();
    let refs = m
        .records
        .iter()
        .map(|r| std::fs::read_to_string(dir.join(&r.label)).unwrap().trim().to_string())
        .collect();
    (m, refs)
}

/// Detector that looks the image up among known samples.
struct Lookup(Vec<(RgbImage, GrayImage)>);

impl TextDetector for Lookup {
    fn probabilities(&self, image: &RgbImage) -> Result<ProbabilityMask> {
        let mask = self.0.iter().find(|(i, _)| i == image).map(|(_, m)| m.clone());
        MaskDetector(mask).probabilities(image)
    }
}

/// Per-sample oracles, chosen by which source image the crop came from.
struct Table(Vec<(RgbImage, BoxOracle)>);

impl Recognizer for Table {
    fn health_check(&self) -> Result<String> {
        Ok("table".into())
    }

    fn recognize_raw(&self, patch: &ImagePatch) -> Result<(String, Option<f64>)> {
        let b = patch.bbox;
        for (image, o) in &self.0 {
            if image.view(b.x, b.y, b.w, b.h).to_image() == patch.image {
                return o.recognize_raw(patch);
            }
        }
        Ok((String::new(), None))
    }
}

#[test]
fn end_to_end_with_oracles_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SynthConfig::from_assets(&assets()).unwrap();
    cfg.languages = vec![Language::De];
    cfg.max_words = 1;
    cfg.seed = 8;
    generate_dataset(&cfg, 3, dir.path()).unwrap();
    let (m, refs) = labels(dir.path());
    let samples: Vec<_> = m.records.iter().map(|r| crate::synthgen::load_sample(dir.path(), r).unwrap()).collect();
    let detector = Lookup(samples.iter().map(|s| (s.image.clone(), s.mask.clone())).collect());
    let table = Table(
        samples
            .iter()
            .map(|s| (s.image.clone(), BoxOracle { boxes: s.word_boxes.clone(), words: vec![s.text.clone()] }))
            .collect(),
    );
    let p = Pipeline::new(Box::new(detector), Box::new(table), Box::new(Identity), settings()).unwrap();
    let report = evaluate_end_to_end(&p, dir.path(), &m, &refs).unwrap();
    assert!(report.mean_iou > 0.9, "{}", report.mean_iou);
    assert_eq!(report.ocr_exact_match, 1.0);
    assert_eq!(report.translation.bleu, 1.0);
    assert!(report.to_json().contains("\"BLEU\": 1.0"));

    let none = Pipeline::new(
        Box::new(MaskDetector(None)),
        Box::new(BoxOracle { boxes: vec![], words: vec![] }),
        Box::new(Identity),
        settings(),
    )
    .unwrap();
    let report = evaluate_end_to_end(&none, dir.path(), &m, &refs).unwrap();
    assert_eq!((report.mean_iou, report.translation.bleu), (0.0, 0.0));
    assert!(matches!(evaluate_end_to_end(&none, dir.path(), &m, &refs[1..]), Err(Error::Validation(_))));
}

#[test]
fn config_json_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let json = serde_json::json!({
        "detector_checkpoint": dir.path().join("det.ckpt"),
        "translator_checkpoint": dir.path().join("nmt.ckpt"),
        "src_vocab": dir.path().join("src.vocab"),
        "tgt_vocab": dir.path().join("tgt.vocab"),
        "recognizer": {"engine": "external"},
        "binarize_threshold": 0.5,
        "min_area": 8,
        "source_language": "de",
        "target_language": "en"
    });
    let path = dir.path().join("pipeline.json");
    std::fs::write(&path, json.to_string()).unwrap();
    match PipelineConfig::load(&path) {
        Err(Error::Config(m)) => assert!(m.contains("detector_checkpoint"), "{m}"),
        other => panic!("expected a config error, got {other:?}"),
    }
    for f in ["det.ckpt", "nmt.ckpt", "src.vocab", "tgt.vocab"] {
        std::fs::write(dir.path().join(f), b"").unwrap();
    }
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!((cfg.source_language, cfg.target_language), (Language::De, Language::En));
    assert_eq!(cfg.word_gap_x, 6);
    // unreadable checkpoints are reported against the stage that needs them
    match Pipeline::from_config(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "detect"),
        other => panic!("expected a stage error, got {:?}", other.err()),
    }
    let bad = json.to_string().replace("\"de\"", "\"xx\"");
    std::fs::write(&path, bad).unwrap();
    assert!(matches!(PipelineConfig::load(&path), Err(Error::Format { .. })));
}
