//! Binary mask to word boxes: connected-component labeling, tight boxes in
//! reading order, and padded crops of the source image.

use image::{GenericImageView, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default speckle filter for [`components_to_boxes`].
pub const DEFAULT_MIN_AREA: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BoundingBox { x, y, w, h }
    }

    /// Box spanning the inclusive pixel range `[x0, x1] x [y0, y1]`.
    pub fn from_extents(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        BoundingBox { x: x0, y: y0, w: x1 - x0 + 1, h: y1 - y0 + 1 }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn intersection(&self, other: &BoundingBox) -> u64 {
        let w = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let h = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        w as u64 * h as u64
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Maps a box between coordinate frames by scaling its edges outward,
    /// so the result covers every pixel the source box touches.
    pub fn scale(&self, sx: f64, sy: f64) -> BoundingBox {
        let x0 = (self.x as f64 * sx).floor() as u32;
        let y0 = (self.y as f64 * sy).floor() as u32;
        let x1 = ((self.right() as f64 * sx).ceil() as u32).max(x0 + 1);
        let y1 = ((self.bottom() as f64 * sy).ceil() as u32).max(y0 + 1);
        BoundingBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    /// Grows by `pad` on every side and clips to a `width x height` image.
    pub fn pad_clamped(&self, pad: u32, width: u32, height: u32) -> BoundingBox {
        let x0 = self.x.saturating_sub(pad).min(width.saturating_sub(1));
        let y0 = self.y.saturating_sub(pad).min(height.saturating_sub(1));
        let x1 = (self.right() + pad).min(width).max(x0 + 1);
        let y1 = (self.bottom() + pad).min(height).max(y0 + 1);
        BoundingBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Component ids per pixel, row-major. Ids are numbered `1..=count` in the
/// raster order of each component's first pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl LabelMap {
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[(y * self.width + x) as usize]
    }
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        parent[a as usize] = parent[parent[a as usize] as usize];
        a = parent[a as usize];
    }
    a
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

fn check_binary(mask: &GrayImage) -> Result<()> {
    if let Some(v) = mask.as_raw().iter().find(|&&v| v != 0 && v != 255) {
        return Err(Error::Validation(format!("mask value {v} is not 0 or 255")));
    }
    Ok(())
}

/// Two-pass union-find labeling over a `{0, 255}` mask.
pub fn extract_components(mask: &GrayImage, connectivity: Connectivity) -> Result<LabelMap> {
    check_binary(mask)?;
    Ok(label_foreground(mask.width(), mask.height(), |i| mask.as_raw()[i] != 0, connectivity))
}

fn label_foreground(width: u32, height: u32, fg: impl Fn(usize) -> bool, connectivity: Connectivity) -> LabelMap {
    let (w, h) = (width as usize, height as usize);
    let mut provisional = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !fg(i) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut push = |v: u32| {
                if v != 0 {
                    neighbors[n] = v;
                    n += 1;
                }
            };
            if x > 0 {
                push(provisional[i - 1]);
            }
            if y > 0 {
                push(provisional[i - w]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(provisional[i - w - 1]);
                    }
                    if x + 1 < w {
                        push(provisional[i - w + 1]);
                    }
                }
            }
            if n == 0 {
                let id = parent.len() as u32;
                parent.push(id);
                provisional[i] = id;
            } else {
                let first = neighbors[0];
                for &other in &neighbors[1..n] {
                    union(&mut parent, first, other);
                }
                provisional[i] = first;
            }
        }
    }
    let mut dense = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut labels = provisional;
    for v in labels.iter_mut() {
        if *v == 0 {
            continue;
        }
        let root = find(&mut parent, *v) as usize;
        if dense[root] == 0 {
            count += 1;
            dense[root] = count;
        }
        *v = dense[root];
    }
    LabelMap { width, height, labels, count: count as usize }
}

/// Labels the mask after bridging gaps of up to `gap_x` columns and `gap_y`
/// rows, then keeps labels only on original foreground. Glyphs of one word
/// share a label while wider gaps between words keep them apart.
pub fn word_components(mask: &GrayImage, gap_x: u32, gap_y: u32) -> Result<LabelMap> {
    check_binary(mask)?;
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let src = mask.as_raw();
    let (rx, ry) = (gap_x.div_ceil(2) as usize, gap_y.div_ceil(2) as usize);
    // separable box dilation
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let mut last_fg: Option<usize> = None;
        let mut next_fg = vec![usize::MAX; w];
        let mut nxt = usize::MAX;
        for x in (0..w).rev() {
            if row[x] != 0 {
                nxt = x;
            }
            next_fg[x] = nxt;
        }
        for x in 0..w {
            if row[x] != 0 {
                last_fg = Some(x);
            }
            let near_left = last_fg.is_some_and(|l| x - l <= rx);
            let near_right = next_fg[x] != usize::MAX && next_fg[x] - x <= rx;
            horiz[y * w + x] = near_left || near_right;
        }
    }
    let mut dilated = vec![false; w * h];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(ry);
            let hi = (y + ry).min(h - 1);
            dilated[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
        }
    }
    let grouped = label_foreground(mask.width(), mask.height(), |i| dilated[i], Connectivity::Eight);
    let mut remap = vec![0u32; grouped.count + 1];
    let mut count = 0u32;
    let labels = grouped
        .labels
        .iter()
        .zip(src)
        .map(|(&l, &m)| {
            if m == 0 {
                return 0;
            }
            if remap[l as usize] == 0 {
                count += 1;
                remap[l as usize] = count;
            }
            remap[l as usize]
        })
        .collect();
    Ok(LabelMap { width: grouped.width, height: grouped.height, labels, count: count as usize })
}

/// Tight box per component with at least `min_area` pixels, in reading order.
pub fn components_to_boxes(labels: &LabelMap, min_area: usize) -> Vec<BoundingBox> {
    let mut ext = vec![(u32::MAX, u32::MAX, 0u32, 0u32, 0usize); labels.count + 1];
    for y in 0..labels.height {
        for x in 0..labels.width {
            let l = labels.get(x, y) as usize;
            if l == 0 {
                continue;
            }
            let e = &mut ext[l];
            e.0 = e.0.min(x);
            e.1 = e.1.min(y);
            e.2 = e.2.max(x);
            e.3 = e.3.max(y);
            e.4 += 1;
        }
    }
    let boxes = ext[1..]
        .iter()
        .filter(|e| e.4 > 0 && e.4 >= min_area)
        .map(|e| BoundingBox::from_extents(e.0, e.1, e.2, e.3))
        .collect();
    reading_order(boxes)
}

/// Groups boxes into rows whose doubled y-centers lie within the median box
/// height of the row's first box, then orders rows top to bottom and boxes
/// left to right (ties by `y`).
pub fn reading_order(mut boxes: Vec<BoundingBox>) -> Vec<BoundingBox> {
    if boxes.len() < 2 {
        return boxes;
    }
    let mut heights: Vec<u32> = boxes.iter().map(|b| b.h).collect();
    heights.sort_unstable();
    let tol2 = heights[heights.len() / 2] as u64;
    let center2 = |b: &BoundingBox| 2 * b.y as u64 + b.h as u64;
    boxes.sort_by_key(|b| (center2(b), b.x, b.y, b.w, b.h));
    let mut out = Vec::with_capacity(boxes.len());
    let mut row: Vec<BoundingBox> = Vec::new();
    let mut anchor = 0u64;
    for b in boxes {
        if !row.is_empty() && center2(&b) - anchor > tol2 {
            row.sort_by_key(|b| (b.x, b.y, b.w, b.h));
            out.append(&mut row);
        }
        if row.is_empty() {
            anchor = center2(&b);
        }
        row.push(b);
    }
    row.sort_by_key(|b| (b.x, b.y, b.w, b.h));
    out.append(&mut row);
    out
}

/// A crop of the source image with the (padded, clamped) box it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatch {
    pub bbox: BoundingBox,
    pub image: RgbImage,
}

/// Crops every box grown by `pad` and clamped to the image, in order.
pub fn crop_regions(image: &RgbImage, boxes: &[BoundingBox], pad: u32) -> Vec<ImagePatch> {
    boxes
        .iter()
        .map(|b| {
            let c = b.pad_clamped(pad, image.width(), image.height());
            ImagePatch { bbox: c, image: image.view(c.x, c.y, c.w, c.h).to_image() }
        })
        .collect()
}

pub fn boxes_to_json(boxes: &[BoundingBox]) -> String {
    serde_json::to_string(boxes).expect("boxes serialize")
}
