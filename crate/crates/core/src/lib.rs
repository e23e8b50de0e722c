//! Multi-agent trajectory forecasting.
//!
//! An LSTM encoder summarizes each agent's recent track, a target-centered
//! social map scatters neighbor encodings onto a k×k grid, an attention mask
//! predicted from the target's own encoding weights that map, a small CNN
//! fuses it into an interaction embedding, and an LSTM decoder rolls the
//! future trajectory out — trained with either a plain L2 head or a
//! bivariate-Gaussian likelihood head. Baselines, synthetic scene
//! generation, metrics, and training/evaluation harnesses are included.
//!
//! The numeric stack is generic over the scalar type: models train and ship
//! in `f32` (see the aliases below); the `f64` instantiation exists so
//! gradient implementations can be validated at tight tolerances.

pub mod adam;
pub mod baselines;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod num;
pub mod params;
pub mod plot;
pub mod scene;
pub mod scene_io;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use num::Scalar;

/// Training/inference precision used by the shipped models.
pub type Tensor32 = tensor::Tensor<f32>;
/// Wide instantiation used by gradient-validation tests.
pub type Tensor64 = tensor::Tensor<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type SceneBatch32 = scene::SceneBatch<f32>;
