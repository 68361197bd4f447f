use std::path::Path;

use super::{Pipeline, PipelineResult};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, EvalOptions, MetricReport};
use crate::ocr::normalize_text;
use crate::regions::BoundingBox;
use crate::synthgen::{load_sample, DatasetManifest};

#[derive(Clone, Debug, PartialEq)]
pub struct EndToEndReport {
    /// Mean IoU over ground-truth boxes; unmatched boxes count as 0.
    pub mean_iou: f64,
    /// Fraction of images whose joined recognition equals the label.
    pub ocr_exact_match: f64,
    pub translation: MetricReport,
    pub images: usize,
    pub results: Vec<PipelineResult>,
}

impl EndToEndReport {
    pub fn to_json(&self) -> String {
        let translation: serde_json::Value =
            serde_json::from_str(&self.translation.to_json()).expect("report JSON is valid");
        serde_json::to_string_pretty(&serde_json::json!({
            "mean_iou": self.mean_iou,
            "ocr_exact_match": self.ocr_exact_match,
            "images": self.images,
            "translation": translation,
            "results": self.results,
        }))
        .expect("plain values serialize")
    }
}

/// One-to-one matching of predicted to ground-truth boxes, greedily by
/// descending IoU (ties by ground-truth then prediction index). Returns the
/// IoU credited to each ground-truth box.
pub fn match_boxes(truth: &[BoundingBox], predicted: &[BoundingBox]) -> Vec<f64> {
    let mut candidates = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, p) in predicted.iter().enumerate() {
            let iou = t.iou(p);
            if iou > 0.0 {
                candidates.push((iou, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut credit = vec![0.0; truth.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pred_used = vec![false; predicted.len()];
    for (iou, i, j) in candidates {
        if !truth_used[i] && !pred_used[j] {
            truth_used[i] = true;
            pred_used[j] = true;
            credit[i] = iou;
        }
    }
    credit
}

/// Runs the pipeline on every manifest sample and scores detection,
/// recognition and translation. `references[i]` is the reference
/// translation of record `i`.
pub fn evaluate_end_to_end(
    pipeline: &Pipeline,
    dir: &Path,
    manifest: &DatasetManifest,
    references: &[String],
) -> Result<EndToEndReport> {
    if manifest.is_empty() {
        return Err(Error::Validation("empty manifest".into()));
    }
    if references.len() != manifest.len() {
        return Err(Error::Validation(format!(
            "{} references for {} samples",
            references.len(),
            manifest.len()
        )));
    }
    let mut ious = Vec::new();
    let mut exact = 0usize;
    let mut hyps = Vec::with_capacity(manifest.len());
    let mut results = Vec::with_capacity(manifest.len());
    for rec in &manifest.records {
        let sample = load_sample(dir, rec)?;
        let result = pipeline.translate_image(&sample.image)?;
        ious.extend(match_boxes(&rec.word_boxes, &result.boxes));
        if result.source_text == normalize_text(&sample.text) {
            exact += 1;
        }
        hyps.push(result.translated_text.clone());
        results.push(result);
    }
    ious.sort_by(f64::total_cmp);
    let mean_iou = if ious.is_empty() { 0.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 };
    let translation = evaluate_corpus(&hyps, references, EvalOptions::default())?;
    Ok(EndToEndReport {
        mean_iou,
        ocr_exact_match: exact as f64 / manifest.len() as f64,
        translation,
        images: manifest.len(),
        results,
    })
}
