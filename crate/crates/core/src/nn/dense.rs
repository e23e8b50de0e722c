//! Fully connected layer: y = W x + b, with backward.

use crate::error::{CoreError, Result};
use crate::num::Scalar;
use crate::tensor::Tensor;

/// Forward pass. `w` has shape (out, in), `b` shape (out), `x` length in.
pub fn dense_forward<S: Scalar>(x: &[S], w: &Tensor<S>, b: &Tensor<S>) -> Result<Vec<S>> {
    if w.rank() != 2 {
        return Err(CoreError::Shape {
            op: "dense_forward",
            detail: format!("weight must be rank 2, got {:?}", w.shape()),
        });
    }
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    if x.len() != in_dim || b.shape() != [out_dim] {
        return Err(CoreError::Shape {
            op: "dense_forward",
            detail: format!(
                "w {:?}, b {:?}, x len {}",
                w.shape(),
                b.shape(),
                x.len()
            ),
        });
    }
    let wd = w.data();
    let mut y = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &wd[o * in_dim..(o + 1) * in_dim];
        let mut acc = b.data()[o];
        for (wi, xi) in row.iter().zip(x.iter()) {
            acc += *wi * *xi;
        }
        y.push(acc);
    }
    Ok(y)
}

/// Gradients of a dense layer for one input.
pub struct DenseGrads<S> {
    pub dw: Tensor<S>,
    pub db: Tensor<S>,
    pub dx: Vec<S>,
}

/// Backward pass: given upstream dy, the stored input x, and the weights,
/// produce dW = dy xᵀ, db = dy, dx = Wᵀ dy.
pub fn dense_backward<S: Scalar>(dy: &[S], x: &[S], w: &Tensor<S>) -> DenseGrads<S> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(dy.len(), out_dim);
    debug_assert_eq!(x.len(), in_dim);
    let wd = w.data();

    let mut dw = Tensor::zeros(w.shape());
    let mut dx = vec![S::zero(); in_dim];
    {
        let dwd = dw.data_mut();
        for o in 0..out_dim {
            let g = dy[o];
            let row = &wd[o * in_dim..(o + 1) * in_dim];
            let drow = &mut dwd[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                drow[i] = g * x[i];
                dx[i] += row[i] * g;
            }
        }
    }
    let db = Tensor::from_vec(&[out_dim], dy.to_vec()).expect("db shape");
    DenseGrads { dw, db, dx }
}
