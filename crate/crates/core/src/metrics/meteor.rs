use std::collections::HashMap;
use std::hash::Hash;

/// Above this many memoized states the chunk search falls back to a greedy
/// left-to-right alignment.
const STATE_LIMIT: usize = 200_000;

/// Exact-match METEOR with the default parameters (`alpha = 0.9`,
/// `beta = 3`, `gamma = 0.5`).
pub fn meteor<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    let (m, chunks) = align(hyp, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}

/// Maximum number of matches and, among maximal alignments, the minimum
/// number of chunks.
pub fn align<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> (usize, usize) {
    let mut ref_pos: HashMap<&T, Vec<usize>> = HashMap::new();
    for (j, t) in reference.iter().enumerate() {
        ref_pos.entry(t).or_default().push(j);
    }
    let mut hyp_count: HashMap<&T, usize> = HashMap::new();
    for t in hyp {
        *hyp_count.entry(t).or_default() += 1;
    }
    let m: usize = hyp_count
        .iter()
        .map(|(t, &c)| c.min(ref_pos.get(t).map_or(0, Vec::len)))
        .sum();
    if m == 0 {
        return (0, 0);
    }
    if reference.len() <= 128 {
        let mut search = Search {
            hyp,
            ref_pos: &ref_pos,
            hyp_left: hyp_suffix_counts(hyp),
            memo: HashMap::new(),
            aborted: false,
        };
        let chunks = search.best(0, usize::MAX, 0);
        if !search.aborted {
            return (m, chunks);
        }
    }
    (m, greedy_chunks(hyp, &ref_pos, reference.len()))
}

/// `hyp_left[i]` = occurrences of `hyp[i]` at positions `>= i`.
fn hyp_suffix_counts<T: Eq + Hash>(hyp: &[T]) -> Vec<usize> {
    let mut seen: HashMap<&T, usize> = HashMap::new();
    let mut out = vec![0; hyp.len()];
    for i in (0..hyp.len()).rev() {
        let c = seen.entry(&hyp[i]).or_default();
        *c += 1;
        out[i] = *c;
    }
    out
}

struct Search<'a, T> {
    hyp: &'a [T],
    ref_pos: &'a HashMap<&'a T, Vec<usize>>,
    hyp_left: Vec<usize>,
    memo: HashMap<(usize, usize, u128), usize>,
    aborted: bool,
}

impl<T: Eq + Hash> Search<'_, T> {
    /// Minimum chunks for `hyp[i..]` given the reference position matched by
    /// `hyp[i - 1]` (`usize::MAX` if unmatched) and the used positions.
    /// Every alignment explored keeps the match count maximal.
    fn best(&mut self, i: usize, prev: usize, used: u128) -> usize {
        if i == self.hyp.len() || self.aborted {
            return 0;
        }
        if let Some(&v) = self.memo.get(&(i, prev, used)) {
            return v;
        }
        if self.memo.len() >= STATE_LIMIT {
            self.aborted = true;
            return 0;
        }
        let positions: &[usize] = self.ref_pos.get(&self.hyp[i]).map_or(&[], Vec::as_slice);
        let free = positions.iter().filter(|&&j| used & (1u128 << j) == 0).count();
        let mut best = usize::MAX;
        // skipping is allowed only if the later occurrences can still use up
        // every free reference slot of this token
        if self.hyp_left[i] > free {
            best = self.best(i + 1, usize::MAX, used);
        }
        for &j in positions {
            if used & (1u128 << j) != 0 {
                continue;
            }
            let new_chunk = usize::from(prev == usize::MAX || prev + 1 != j);
            let v = new_chunk + self.best(i + 1, j, used | (1u128 << j));
            best = best.min(v);
        }
        self.memo.insert((i, prev, used), best);
        best
    }
}

fn greedy_chunks<T: Eq + Hash>(hyp: &[T], ref_pos: &HashMap<&T, Vec<usize>>, ref_len: usize) -> usize {
    let mut used = vec![false; ref_len];
    let mut prev = usize::MAX;
    let mut chunks = 0;
    for t in hyp {
        let Some(positions) = ref_pos.get(t) else {
            prev = usize::MAX;
            continue;
        };
        let pick = positions
            .iter()
            .copied()
            .find(|&j| !used[j] && prev != usize::MAX && j == prev + 1)
            .or_else(|| positions.iter().copied().find(|&j| !used[j]));
        match pick {
            Some(j) => {
                if prev == usize::MAX || j != prev + 1 {
                    chunks += 1;
                }
                used[j] = true;
                prev = j;
            }
            None => prev = usize::MAX,
        }
    }
    chunks
}
