use crate::error::{Error, Result};

/// Longest block considered for a shift.
const MAX_SHIFT_LEN: usize = 10;

#[derive(Clone, Copy, Debug)]
pub struct TerOptions {
    pub shifts: bool,
}

impl Default for TerOptions {
    fn default() -> Self {
        TerOptions { shifts: true }
    }
}

/// Word-level Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn ter<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> Result<f64> {
    ter_with(hyp, reference, TerOptions::default())
}

/// Edits plus block shifts, per reference token. Shifts are found greedily:
/// while some shift of a hypothesis block onto a matching reference position
/// lowers the edit distance, the one with the largest reduction is applied.
pub fn ter_with<T: PartialEq + Clone>(hyp: &[T], reference: &[T], opts: TerOptions) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Validation("TER needs a non-empty reference".into()));
    }
    let mut cur = hyp.to_vec();
    let mut dist = edit_distance(&cur, reference);
    let mut shifts = 0usize;
    while opts.shifts && dist > 0 {
        match best_shift(&cur, reference, dist) {
            Some((next, d)) => {
                cur = next;
                dist = d;
                shifts += 1;
            }
            None => break,
        }
    }
    Ok((dist + shifts) as f64 / reference.len() as f64)
}

fn best_shift<T: PartialEq + Clone>(hyp: &[T], reference: &[T], dist: usize) -> Option<(Vec<T>, usize)> {
    let mut best: Option<(Vec<T>, usize)> = None;
    for start in 0..hyp.len() {
        for len in 1..=MAX_SHIFT_LEN.min(hyp.len() - start) {
            let block = &hyp[start..start + len];
            if len > reference.len() {
                break;
            }
            for j in 0..=reference.len() - len {
                if &reference[j..j + len] != block {
                    continue;
                }
                let mut rest: Vec<T> = Vec::with_capacity(hyp.len());
                rest.extend_from_slice(&hyp[..start]);
                rest.extend_from_slice(&hyp[start + len..]);
                let at = j.min(rest.len());
                if at == start {
                    continue;
                }
                let mut moved = rest[..at].to_vec();
                moved.extend_from_slice(block);
                moved.extend_from_slice(&rest[at..]);
                let d = edit_distance(&moved, reference);
                if d < best.as_ref().map_or(dist, |b| b.1) {
                    best = Some((moved, d));
                }
            }
        }
    }
    best
}
