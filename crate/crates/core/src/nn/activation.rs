//! Pointwise nonlinearities and the softmax used by the attention head.

use crate::error::{CoreError, Result};
use crate::num::Scalar;

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// d sigmoid(x) / dx expressed through the forward value y = sigmoid(x).
#[inline]
pub fn sigmoid_deriv_from_y<S: Scalar>(y: S) -> S {
    y * (S::one() - y)
}

/// d tanh(x) / dx expressed through the forward value y = tanh(x).
#[inline]
pub fn tanh_deriv_from_y<S: Scalar>(y: S) -> S {
    S::one() - y * y
}

#[inline]
pub fn relu<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        S::zero()
    }
}

/// Numerically stable softmax over a flat slice.
///
/// Rejects empty and non-finite input; the output always sums to 1 because
/// every term is divided by the same positive, finite normalizer.
pub fn softmax<S: Scalar>(logits: &[S]) -> Result<Vec<S>> {
    if logits.is_empty() {
        return Err(CoreError::Shape {
            op: "softmax",
            detail: "empty input".to_string(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("softmax input".to_string()));
    }
    let max = logits.iter().fold(logits[0], |a, &b| a.max(b));
    let exps: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: S = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Backward through softmax given the forward output `y` and upstream `dy`:
/// dx_i = y_i * (dy_i - sum_j dy_j y_j).
pub fn softmax_backward<S: Scalar>(dy: &[S], y: &[S]) -> Vec<S> {
    debug_assert_eq!(dy.len(), y.len());
    let dot: S = dy.iter().zip(y.iter()).map(|(&d, &p)| d * p).sum();
    dy.iter()
        .zip(y.iter())
        .map(|(&d, &p)| p * (d - dot))
        .collect()
}
