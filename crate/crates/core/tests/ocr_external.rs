//! Runs the external recognition engine on rendered words. Reports itself
//! as skipped when the engine is not installed.

use std::path::PathBuf;

use doctrans_core::ocr::{build_recognizer, recognize_regions, RecognizerSpec};
use doctrans_core::regions::crop_regions;
use doctrans_core::synthgen::{SynthConfig, Synthesizer};
use doctrans_core::Language;

#[test]
fn external_engine_reads_rendered_words() {
    let mut spec = RecognizerSpec::external(Some(Language::En));
    spec.preprocess = true;
    let rec = build_recognizer(&spec).unwrap();
    if let Err(e) = rec.health_check() {
        eprintln!("skipped: external engine unavailable ({e})");
        return;
    }
    let assets = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets");
    let mut cfg = SynthConfig::from_assets(&assets).unwrap();
    cfg.languages = vec![Language::En];
    cfg.font_size_range = (22.0, 22.0);
    cfg.text_level = (0, 0);
    cfg.background_level = (255, 255);
    cfg.seed = 5;
    let synth = Synthesizer::new(cfg).unwrap();
    let (mut read, mut total) = (0, 0);
    for i in 1..=5 {
        let sample = synth.sample(i).unwrap();
        let patches = crop_regions(&sample.image, &sample.word_boxes, 4);
        let results = recognize_regions(rec.as_ref(), &patches).unwrap();
        for (r, word) in results.iter().zip(sample.text.split_whitespace()) {
            total += 1;
            read += usize::from(r.text.eq_ignore_ascii_case(word));
        }
    }
    // clean black-on-white words should mostly be read back
    assert!(read * 2 >= total, "read {read} of {total} words");
}
