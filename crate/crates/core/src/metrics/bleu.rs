use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Add one to the matched and total counts of an order `n >= 2` whose
    /// pooled match count is zero.
    pub smoothing: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions { max_n: 4, smoothing: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    /// Score using all orders up to `max_n`.
    pub bleu: f64,
    /// Cumulative score up to order `n`, at index `n - 1`.
    pub cumulative: Vec<f64>,
    /// Pooled modified precision per order, after smoothing.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU against a single reference per segment.
pub fn corpus_bleu<T, H, R>(hyps: &[H], refs: &[R], opts: BleuOptions) -> Result<BleuScore>
where
    T: Eq + Hash,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if hyps.len() != refs.len() {
        return Err(Error::Validation(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Validation("empty corpus".into()));
    }
    if opts.max_n == 0 {
        return Err(Error::Validation("max_n must be at least 1".into()));
    }
    let mut matched = vec![0usize; opts.max_n];
    let mut total = vec![0usize; opts.max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        let (h, rf) = (h.as_ref(), rf.as_ref());
        c += h.len();
        r += rf.len();
        for n in 1..=opts.max_n {
            let ref_counts = ngram_counts(rf, n);
            for (gram, count) in ngram_counts(h, n) {
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    let precisions: Vec<f64> = (0..opts.max_n)
        .map(|i| {
            if opts.smoothing && i >= 1 && matched[i] == 0 {
                1.0 / (total[i] + 1) as f64
            } else if total[i] == 0 {
                0.0
            } else {
                matched[i] as f64 / total[i] as f64
            }
        })
        .collect();
    let brevity_penalty = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut cumulative = Vec::with_capacity(opts.max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for (i, &p) in precisions.iter().enumerate() {
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += p.ln();
        }
        cumulative.push(if zero || c == 0 {
            0.0
        } else {
            brevity_penalty * (log_sum / (i + 1) as f64).exp()
        });
    }
    Ok(BleuScore {
        bleu: cumulative[opts.max_n - 1],
        cumulative,
        precisions,
        brevity_penalty,
        hyp_len: c,
        ref_len: r,
    })
}
