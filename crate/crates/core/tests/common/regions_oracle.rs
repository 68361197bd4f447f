use std::collections::VecDeque;

use doctrans_core::regions::BoundingBox;
use image::GrayImage;

/// Boxes by BFS flood fill from each unvisited foreground pixel, 8-neighbors,
/// filtered by area and put in reading order with a plain comparison sort.
pub fn flood_fill_boxes(mask: &GrayImage, min_area: usize) -> Vec<BoundingBox> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let fg = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask.get_pixel(x as u32, y as u32)[0] == 255;
    let mut seen = vec![false; (w * h) as usize];
    let mut boxes = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !fg(sx, sy) || seen[(sy * w + sx) as usize] {
                continue;
            }
            let (mut x0, mut y0, mut x1, mut y1, mut n) = (sx, sy, sx, sy, 0usize);
            let mut q = VecDeque::from([(sx, sy)]);
            seen[(sy * w + sx) as usize] = true;
            while let Some((x, y)) = q.pop_front() {
                n += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if fg(nx, ny) && !seen[(ny * w + nx) as usize] {
                            seen[(ny * w + nx) as usize] = true;
                            q.push_back((nx, ny));
                        }
                    }
                }
            }
            if n >= min_area {
                boxes.push(BoundingBox::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32));
            }
        }
    }
    order_rows(boxes)
}

/// Reading order: rows start at the topmost remaining center (doubled
/// coordinates) and absorb boxes within the median height of it.
fn order_rows(mut rest: Vec<BoundingBox>) -> Vec<BoundingBox> {
    if rest.len() < 2 {
        return rest;
    }
    let mut hs: Vec<u32> = rest.iter().map(|b| b.h).collect();
    hs.sort();
    let tol = hs[hs.len() / 2] as u64;
    let c2 = |b: &BoundingBox| 2 * b.y as u64 + b.h as u64;
    let key = |b: &BoundingBox| (c2(b), b.x, b.y, b.w, b.h);
    let mut out = Vec::new();
    while !rest.is_empty() {
        let first = *rest.iter().min_by_key(|b| key(b)).unwrap();
        let anchor = c2(&first);
        // boxes sorted by center; a row is the maximal prefix within tolerance
        let (mut row, others): (Vec<_>, Vec<_>) = rest.into_iter().partition(|b| c2(b) - anchor <= tol);
        row.sort_by(|a, b| (a.x, a.y, a.w, a.h).cmp(&(b.x, b.y, b.w, b.h)));
        out.extend(row);
        rest = others;
    }
    out
}
