use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize, tokenize, ParallelPair};
use crate::error::{Error, Result};
use crate::lang::Language;

pub const HEADER: [&str; 4] = ["source_text", "target_text", "source_language", "target_language"];

#[derive(Clone, Copy, Debug, Default)]
pub struct CorpusOptions {
    /// Lowercase and strip punctuation on both sides (off by default).
    pub normalize: bool,
    /// Drop pairs whose encoded source (`tokens + 4`) or decoder sequence
    /// (`tokens + 2`) would exceed this length.
    pub max_seq_len: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectsReport {
    pub total_rows: usize,
    pub loaded: usize,
    pub rejected_empty: usize,
    pub rejected_language: usize,
    pub rejected_length: usize,
    /// Rows with undecodable bytes or the wrong number of fields.
    pub rejected_malformed: usize,
}

pub fn load_parallel_corpus(path: &Path, opts: CorpusOptions) -> Result<(Vec<ParallelPair>, RejectsReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_parallel_corpus(file, opts, path)
}

/// Reads the four-column CSV corpus; `origin` is only used in error messages.
pub fn read_parallel_corpus<R: Read>(
    reader: R,
    opts: CorpusOptions,
    origin: &Path,
) -> Result<(Vec<ParallelPair>, RejectsReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .byte_headers()
        .map_err(|e| Error::format(origin, format!("unreadable header: {e}")))?
        .clone();
    let names: Vec<&str> = header
        .iter()
        .map(std::str::from_utf8)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(origin, "header is not valid UTF-8"))?;
    let names: Vec<&str> = names.iter().map(|n| n.trim_start_matches('\u{feff}').trim()).collect();
    if names != HEADER {
        return Err(Error::format(
            origin,
            format!("expected header {:?}, found {:?}", HEADER.join(","), names.join(",")),
        ));
    }

    let mut report = RejectsReport::default();
    let mut pairs = Vec::new();
    for record in rdr.byte_records() {
        report.total_rows += 1;
        let record = match record {
            Ok(r) if r.len() == 4 => r,
            _ => {
                report.rejected_malformed += 1;
                continue;
            }
        };
        let fields: Option<Vec<&str>> = record.iter().map(|f| std::str::from_utf8(f).ok()).collect();
        let Some(fields) = fields else {
            report.rejected_malformed += 1;
            continue;
        };
        let (mut src, mut tgt) = (fields[0].trim().to_string(), fields[1].trim().to_string());
        if opts.normalize {
            src = normalize(&src);
            tgt = normalize(&tgt);
        }
        if tokenize(&src).is_empty() || tokenize(&tgt).is_empty() {
            report.rejected_empty += 1;
            continue;
        }
        let (Ok(sl), Ok(tl)) = (fields[2].parse::<Language>(), fields[3].parse::<Language>()) else {
            report.rejected_language += 1;
            continue;
        };
        if let Some(max) = opts.max_seq_len {
            if tokenize(&src).len() + 4 > max || tokenize(&tgt).len() + 2 > max {
                report.rejected_length += 1;
                continue;
            }
        }
        pairs.push(ParallelPair {
            source_text: src,
            target_text: tgt,
            source_language: sl,
            target_language: tl,
        });
    }
    report.loaded = pairs.len();
    Ok((pairs, report))
}

pub fn write_parallel_corpus(path: &Path, pairs: &[ParallelPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for p in pairs {
        w.write_record([
            p.source_text.as_str(),
            p.target_text.as_str(),
            p.source_language.code(),
            p.target_language.code(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
