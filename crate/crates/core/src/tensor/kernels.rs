//! Raw slice kernels shared by the forward and backward passes.

/// Numerically stable softmax; an all `-inf` row becomes all zeros.
pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Geometry of a square-kernel, stride-1 convolution on one image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub ksize: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.ksize
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.ksize
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.ksize * self.ksize
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Valid output column range `[lo, hi)` for kernel offset `kx`.
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let ow = self.out_width();
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.width + self.pad).saturating_sub(kx).min(ow);
        (lo.min(hi), hi)
    }
}

/// Unfolds `image` (`[C, H, W]`) into `cols` (`[C*k*k, Ho*Wo]`).
pub(crate) fn im2col(g: &ConvGeom, image: &[f32], cols: &mut [f32]) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.ksize);
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let src = &image[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                let (lo, hi) = g.x_range(kx);
                for oy in 0..oh {
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize || lo >= hi {
                        out.fill(0.0);
                        continue;
                    }
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    let base = iy as usize * g.width;
                    let ix0 = lo + kx - g.pad;
                    out[lo..hi].copy_from_slice(&src[base + ix0..base + ix0 + (hi - lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `image`.
pub(crate) fn col2im(g: &ConvGeom, cols: &[f32], image: &mut [f32]) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.ksize);
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let dst = &mut image[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                let (lo, hi) = g.x_range(kx);
                if lo >= hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    let ix0 = lo + kx - g.pad;
                    let seg = &src[oy * ow + lo..oy * ow + hi];
                    for (d, s) in dst[base + ix0..base + ix0 + (hi - lo)].iter_mut().zip(seg) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Copies `src` (with `shape`) into a new buffer laid out as `shape` permuted by `perm`.
pub(crate) fn permute(src: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f32>) {
    let nd = shape.len();
    assert_eq!(perm.len(), nd);
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return (out_shape, out);
    }
    let inner = out_shape[nd - 1];
    let inner_stride = strides[nd - 1];
    let mut idx = vec![0usize; nd];
    loop {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| src[base + j * inner_stride]));
        }
        // advance the outer index (all dims except the last)
        let mut d = nd - 1;
        loop {
            if d == 0 {
                return (out_shape, out);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
