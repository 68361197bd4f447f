use std::collections::BTreeMap;

/// BLEU by listing every n-gram explicitly and clipping with per-gram counts.
pub fn oracle_bleu(hyps: &[Vec<u8>], refs: &[Vec<u8>]) -> Vec<f64> {
    let mut num = [0usize; 4];
    let mut den = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let mut hc: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
            let mut rc: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
            let mut i = 0;
            while i + n <= h.len() {
                *hc.entry(h[i..i + n].to_vec()).or_insert(0) += 1;
                i += 1;
            }
            let mut i = 0;
            while i + n <= rf.len() {
                *rc.entry(rf[i..i + n].to_vec()).or_insert(0) += 1;
                i += 1;
            }
            for (g, k) in &hc {
                den[n - 1] += k;
                let in_ref = rc.get(g).cloned().unwrap_or(0);
                num[n - 1] += if *k < in_ref { *k } else { in_ref };
            }
        }
    }
    let mut out = Vec::new();
    for n in 1..=4 {
        let mut prod = 1.0f64;
        let mut any_zero = c == 0;
        for k in 0..n {
            if num[k] == 0 {
                any_zero = true;
            } else {
                prod *= num[k] as f64 / den[k] as f64;
            }
        }
        if any_zero {
            out.push(0.0);
            continue;
        }
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        out.push(bp * prod.powf(1.0 / n as f64));
    }
    out
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn oracle_rouge(a: &[u8], b: &[u8]) -> f64 {
    fn is_subseq(s: &[u8], b: &[u8]) -> bool {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == x))
    }
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        if s.len() > best && is_subseq(&s, b) {
            best = s.len();
        }
    }
    if best == 0 {
        return 0.0;
    }
    let p = best as f64 / a.len() as f64;
    let r = best as f64 / b.len() as f64;
    2.0 * p * r / (p + r)
}

/// Plain recursive Levenshtein distance.
pub fn oracle_edit(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = oracle_edit(ra, rb) + usize::from(x != y);
            sub.min(oracle_edit(ra, b) + 1).min(oracle_edit(a, rb) + 1)
        }
    }
}
