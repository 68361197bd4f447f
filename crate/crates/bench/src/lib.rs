//! Deterministic fixtures shared by the benchmarks.

use doctrans_core::nmtdata::{collate_batch, Batch, EncodedPair, Vocabulary};
use image::{GrayImage, Luma};

/// Cheap integer hash, enough to scatter fixture values.
fn mix(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x
}

/// Square mask of `side` pixels covered by short horizontal strokes.
pub fn stroke_mask(side: u32) -> GrayImage {
    let mut m = GrayImage::new(side, side);
    for i in 0..(side as u64 * side as u64 / 64) {
        let h = mix(i);
        let (x, y, len) = ((h % side as u64) as u32, ((h >> 20) % side as u64) as u32, 2 + (h >> 40) % 10);
        for dx in 0..len as u32 {
            if x + dx < side {
                m.put_pixel(x + dx, y, Luma([255]));
            }
        }
    }
    m
}

/// `n` pseudo-random segments of 5–20 tokens over a small vocabulary.
pub fn token_corpus(n: usize, seed: u64) -> Vec<String> {
    (0..n)
        .map(|i| {
            let h = mix(seed ^ (i as u64) << 8);
            let len = 5 + (h % 16) as usize;
            (0..len).map(|j| format!("w{}", mix(h + j as u64) % 40)).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// A padded batch of `b` pairs with source/target lengths near `len`.
pub fn id_batch(b: usize, len: usize, vocab: u32) -> Batch {
    let reserved = Vocabulary::reserved_len() as u32;
    let pairs: Vec<EncodedPair> = (0..b)
        .map(|i| {
            let n = len - i % 3;
            let ids: Vec<u32> = (0..n).map(|j| reserved + (mix((i * 131 + j) as u64) % (vocab - reserved) as u64) as u32).collect();
            let mut dec_input = vec![Vocabulary::SOS];
            dec_input.extend(&ids[..n - 1]);
            EncodedPair { src_ids: ids.clone(), dec_input_ids: dec_input, dec_target_ids: ids }
        })
        .collect();
    collate_batch(&pairs).expect("non-empty batch")
}
