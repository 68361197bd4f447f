/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1 between a hypothesis and a reference.
pub fn rouge_l<T: PartialEq>(hyp: &[T], reference: &[T]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(hyp, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / hyp.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(rouge_l(&["a", "b"], &["a", "b"]), 1.0);
        assert!((rouge_l(&["a", "c"], &["a", "b", "c"]) - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l::<&str>(&[], &["a"]), 0.0);
        assert_eq!(rouge_l(&["x"], &["a"]), 0.0);
    }
}
