//! Minimal dense `f32` tensors with a tape-based reverse-mode autodiff graph.
//!
//! Everything runs on the CPU in a single thread, so results are bit-for-bit
//! reproducible for a fixed seed. Matrix products go through
//! `matrixmultiply`'s strided sgemm; convolutions are lowered to im2col + sgemm.

mod graph;
mod kernels;
mod params;

pub use graph::{Gradients, Graph, Var};
pub use params::{Adam, AdamConfig, ParamId, ParamStore};

/// Forward-pass mode: training enables dropout and batch statistics.
pub enum Mode<'a> {
    Train(&'a mut rand_chacha::ChaCha8Rng),
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.data.len(), "cannot reshape {:?} into {:?}", self.shape, shape);
        self.shape = shape.to_vec();
        self
    }

    /// Splits a 4-D shape into `(n, c, h, w)`.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape[..] {
            [n, c, h, w] => (n, c, h, w),
            _ => panic!("expected a 4-D tensor, got {:?}", self.shape),
        }
    }

    /// Last dimension and the number of rows in front of it.
    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("scalar has no columns");
        (self.data.len() / cols.max(1), cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// `c = a · b` (or `c += a · b` when `accumulate`) for arbitrarily strided
/// row-major views. All strides are in elements.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    c: &mut [f32],
    c_strides: (usize, usize),
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * c_strides.0 + (n - 1) * c_strides.1 < c.len());
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[i * c_strides.0 + j * c_strides.1] = 0.0;
                }
            }
        }
        return;
    }
    assert!((m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
    assert!((k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

/// Row-wise softmax over the last dimension.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let (rows, cols) = t.rows_cols();
    let mut out = t.data.clone();
    for r in 0..rows {
        kernels::softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
    }
    Tensor::new(&t.shape, out)
}


#[cfg(test)]
mod grad_tests;
