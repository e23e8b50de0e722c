//! Differentiable building blocks: each op has a forward pass and a
//! hand-derived backward pass validated against finite differences.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod lstm;

pub use activation::{relu, sigmoid, softmax, softmax_backward};
pub use conv::{conv2d, conv2d_backward, maxpool2d, maxpool2d_backward, maxpool2d_forward};
pub use dense::{dense_backward, dense_forward};
pub use lstm::{lstm_cell_backward, lstm_cell_forward, lstm_cell_step, LstmStepCache, LstmWeights};
