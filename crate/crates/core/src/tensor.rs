//! Dense row-major tensors over a generic scalar.
//!
//! Deliberately minimal: shape bookkeeping, flat storage, and the handful of
//! elementwise helpers the layers need. Hot loops in the layer code index the
//! flat buffer directly with precomputed strides.

use crate::error::{CoreError, Result};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::Shape {
                op: "from_vec",
                detail: format!("shape {:?} implies {} elements, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Flat offset of a rank-2 index.
    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.rank(), 2);
        i * self.shape[1] + j
    }

    /// Flat offset of a rank-3 index.
    #[inline]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert_eq!(self.rank(), 3);
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    /// Flat offset of a rank-4 index.
    #[inline]
    pub fn idx4(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        debug_assert_eq!(self.rank(), 4);
        ((i * self.shape[1] + j) * self.shape[2] + k) * self.shape[3] + l
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> S {
        self.data[self.idx2(i, j)]
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> S {
        self.data[self.idx3(i, j, k)]
    }

    #[inline]
    pub fn at4(&self, i: usize, j: usize, k: usize, l: usize) -> S {
        self.data[self.idx4(i, j, k, l)]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: S) {
        let off = self.idx2(i, j);
        self.data[off] = v;
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: S) {
        let off = self.idx3(i, j, k);
        self.data[off] = v;
    }

    #[inline]
    pub fn set4(&mut self, i: usize, j: usize, k: usize, l: usize, v: S) {
        let off = self.idx4(i, j, k, l);
        self.data[off] = v;
    }

    /// Adds `factor * other` into `self`; shapes must match exactly.
    pub fn add_scaled(&mut self, other: &Tensor<S>, factor: S) -> Result<()> {
        if self.shape != other.shape {
            return Err(CoreError::Shape {
                op: "add_scaled",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: S) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn fill(&mut self, value: S) {
        for v in &mut self.data {
            *v = value;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry, or zero for an empty tensor.
    pub fn max_abs(&self) -> S {
        self.data
            .iter()
            .fold(S::zero(), |acc, v| acc.max(v.abs()))
    }
}
