//! Reference predictors the learned model is compared against: straight-line
//! least-squares extrapolation and the encoder–decoder without any social
//! input.

use crate::error::{CoreError, Result};
use crate::model::{FusionKind, Model, ModelConfig};
use crate::num::{s, to_f64, Scalar};
use crate::params::ParamStore;
use crate::scene::{build_batch, AgentClass, PredictionInstance};

/// Fits position against frame index per coordinate by ordinary least
/// squares and extrapolates `t_f` steps past the history.
///
/// History samples sit at indices 0..t_h; predictions at t_h..t_h+t_f.
pub fn linear_regression_baseline<S: Scalar>(
    history: &[[S; 3]],
    t_f: usize,
) -> Result<Vec<[S; 3]>> {
    let t_h = history.len();
    if t_h < 2 {
        return Err(CoreError::Invalid(format!(
            "line fit requires at least 2 history points, got {t_h}"
        )));
    }
    if t_f == 0 {
        return Err(CoreError::Invalid("extrapolation requires t_f >= 1".to_string()));
    }
    // x̄ over 0..t_h, and Σ(x−x̄)² — both exact in f64 at any realistic t_h.
    let x_mean = (t_h as f64 - 1.0) / 2.0;
    let sxx: f64 = (0..t_h).map(|x| (x as f64 - x_mean).powi(2)).sum();
    let mut slope = [0.0f64; 3];
    let mut intercept = [0.0f64; 3];
    for c in 0..3 {
        let y_mean = history.iter().map(|p| to_f64(p[c])).sum::<f64>() / t_h as f64;
        let sxy: f64 = history
            .iter()
            .enumerate()
            .map(|(x, p)| (x as f64 - x_mean) * (to_f64(p[c]) - y_mean))
            .sum();
        slope[c] = sxy / sxx;
        intercept[c] = y_mean - slope[c] * x_mean;
    }
    Ok((0..t_f)
        .map(|i| {
            let x = (t_h + i) as f64;
            [
                s(intercept[0] + slope[0] * x),
                s(intercept[1] + slope[1] * x),
                s(intercept[2] + slope[2] * x),
            ]
        })
        .collect())
}

/// The architecture of the no-interaction baseline: same encoder and
/// decoder, social feature pinned to zero, trained with the L2 head.
pub fn lstm_ae_config(base: &ModelConfig) -> ModelConfig {
    ModelConfig {
        fusion: FusionKind::None,
        attention: false,
        head: crate::decoder::LossHead::L2,
        ..*base
    }
}

/// Predicts one future from one history with the no-interaction baseline.
/// `store` must hold parameters registered by a [`lstm_ae_config`] model.
pub fn lstm_ae_baseline<S: Scalar>(
    history: &[[S; 3]],
    class: AgentClass,
    t_f: usize,
    cfg: &ModelConfig,
    store: &ParamStore<S>,
) -> Result<Vec<[S; 3]>> {
    if history.len() != cfg.t_h {
        return Err(CoreError::Shape {
            op: "lstm_ae_baseline",
            detail: format!("history length {} vs configured t_h {}", history.len(), cfg.t_h),
        });
    }
    let model = Model::new(lstm_ae_config(cfg))?;
    let instance = PredictionInstance {
        scene_id: String::new(),
        anchor_t: 0,
        target_id: 0,
        target_class: class,
        target_history: history
            .iter()
            .map(|p| [to_f64(p[0]), to_f64(p[1]), to_f64(p[2])])
            .collect(),
        neighbors: Vec::new(),
        // Free-running decode never reads the truth; the batch layout
        // just needs rows of the right count.
        ground_truth: vec![[0.0; 3]; t_f],
    };
    let batch = build_batch::<S>(&[instance], cfg.k)?;
    let preds = model.predict(store, &batch)?;
    Ok(preds.into_iter().next().expect("one instance").point_estimate())
}
