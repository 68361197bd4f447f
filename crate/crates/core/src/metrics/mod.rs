//! Translation quality metrics: corpus BLEU with cumulative BLEU-n,
//! exact-match METEOR, ROUGE-L and TER.
//!
//! Every function is generic over the token type, so the same code scores
//! whitespace tokens and model token ids.

mod bleu;
mod meteor;
mod rouge;
mod ter;

use std::path::Path;

use crate::error::{Error, Result};
use crate::nmtdata::tokenize;

pub use bleu::{corpus_bleu, BleuOptions, BleuScore};
pub use meteor::{align as meteor_alignment, meteor};
pub use rouge::{lcs_len, rouge_l};
pub use ter::{edit_distance, ter, ter_with, TerOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub bleu: f64,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub ter: f64,
    pub segments: usize,
    /// Per-order pooled precisions and brevity penalty, for the debug view.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub bleu: BleuOptions,
    pub ter: TerOptions,
}

/// Order-independent mean.
fn mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Scores whitespace-tokenized hypotheses against references. BLEU is
/// pooled over the corpus; the other metrics are segment means.
pub fn evaluate_corpus<S: AsRef<str>>(hyps: &[S], refs: &[S], opts: EvalOptions) -> Result<MetricReport> {
    let h: Vec<Vec<&str>> = hyps.iter().map(|s| tokenize(s.as_ref())).collect();
    let r: Vec<Vec<&str>> = refs.iter().map(|s| tokenize(s.as_ref())).collect();
    evaluate_tokens(&h, &r, opts)
}

pub fn evaluate_tokens<T>(hyps: &[Vec<T>], refs: &[Vec<T>], opts: EvalOptions) -> Result<MetricReport>
where
    T: Eq + std::hash::Hash + Clone,
{
    let b = corpus_bleu(hyps, refs, opts.bleu)?;
    if b.cumulative.len() < 4 {
        return Err(Error::Validation("report needs max_n of at least 4".into()));
    }
    let mut ters = Vec::with_capacity(hyps.len());
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        ters.push(ter_with(h, r, opts.ter).map_err(|e| Error::Validation(format!("segment {i}: {e}")))?);
    }
    Ok(MetricReport {
        bleu: b.bleu,
        bleu_1: b.cumulative[0],
        bleu_2: b.cumulative[1],
        bleu_3: b.cumulative[2],
        bleu_4: b.cumulative[3],
        meteor: mean(hyps.iter().zip(refs).map(|(h, r)| meteor(h, r)).collect()),
        rouge_l: mean(hyps.iter().zip(refs).map(|(h, r)| rouge_l(h, r)).collect()),
        ter: mean(ters),
        segments: hyps.len(),
        precisions: b.precisions,
        brevity_penalty: b.brevity_penalty,
    })
}

impl MetricReport {
    fn fields(&self) -> [(&'static str, f64); 8] {
        [
            ("BLEU", self.bleu),
            ("BLEU-1", self.bleu_1),
            ("BLEU-2", self.bleu_2),
            ("BLEU-3", self.bleu_3),
            ("BLEU-4", self.bleu_4),
            ("METEOR", self.meteor),
            ("ROUGE-L", self.rouge_l),
            ("TER", self.ter),
        ]
    }

    /// JSON object with the eight scores at six decimals and the segment count.
    pub fn to_json(&self) -> String {
        let mut s = String::from("{");
        for (k, v) in self.fields() {
            s.push_str(&format!("\"{k}\": {v:.6}, "));
        }
        s.push_str(&format!("\"segments\": {}}}", self.segments));
        s
    }

    /// [`to_json`](Self::to_json) plus a `debug` object with the per-order
    /// precisions and brevity penalty.
    pub fn to_json_debug(&self) -> String {
        let mut s = self.to_json();
        s.pop();
        let p: Vec<String> = self.precisions.iter().map(|p| format!("{p:.6}")).collect();
        s.push_str(&format!(
            ", \"debug\": {{\"precisions\": [{}], \"brevity_penalty\": {:.6}}}}}",
            p.join(", "),
            self.brevity_penalty
        ));
        s
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Two aligned files with one segment per line.
pub fn read_aligned_files(hyp_path: &Path, ref_path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let h = read_lines(hyp_path)?;
    let r = read_lines(ref_path)?;
    if h.len() != r.len() {
        return Err(Error::Validation(format!(
            "{} has {} lines but {} has {}",
            hyp_path.display(),
            h.len(),
            ref_path.display(),
            r.len()
        )));
    }
    Ok((h, r))
}

/// CSV with `hypothesis` and `reference` columns.
pub fn read_pairs_csv(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("missing column {name}")))
    };
    let (hi, ri) = (col("hypothesis")?, col("reference")?);
    let (mut h, mut r) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        h.push(rec.get(hi).unwrap_or("").to_string());
        r.push(rec.get(ri).unwrap_or("").to_string());
    }
    Ok((h, r))
}
