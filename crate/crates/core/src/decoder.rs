//! Trajectory decoder: an LSTM whose initial hidden state is the fused
//! feature (target encoding ++ social feature) rolls the future out one
//! frame at a time. Each step's input is the previous position — the ground
//! truth during training (teacher forcing), the model's own point estimate
//! during inference — starting from the last observed position.
//!
//! Two output heads share the recurrence:
//! * point head — 3 raw outputs scaled to an (x, y, z) position;
//! * Gaussian head — 6 raw outputs mapped to a bivariate Gaussian over
//!   (x, y) plus a point estimate for z: μ = raw·scale, σ = exp(raw),
//!   ρ = tanh(raw), ẑ = raw·scale. All-zero raw outputs therefore decode
//!   to the unit circular Gaussian at the origin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fusion::FUSED_DIM;
use crate::nn::dense::{dense_backward, dense_forward};
use crate::nn::lstm::{
    lstm_cell_backward, lstm_cell_forward, LstmStepCache, LstmWeights,
};
use crate::num::{s, Scalar};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Decoder hidden width; equals the fused-feature width so the fused vector
/// is used as the initial hidden state without projection.
pub const DEC_HIDDEN: usize = FUSED_DIM;
/// Raw output widths per head.
pub const L2_OUT: usize = 3;
pub const GAUSS_OUT: usize = 6;

const W_IH: &str = "decoder.lstm.w_ih";
const W_HH: &str = "decoder.lstm.w_hh";
const BIAS: &str = "decoder.lstm.b";
const L2_W: &str = "decoder.head_l2.w";
const L2_B: &str = "decoder.head_l2.b";
const GAUSS_W: &str = "decoder.head_gauss.w";
const GAUSS_B: &str = "decoder.head_gauss.b";

/// Which output head (and loss) the model trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossHead {
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "gauss")]
    Gaussian,
}

impl LossHead {
    pub fn out_dim(self) -> usize {
        match self {
            LossHead::L2 => L2_OUT,
            LossHead::Gaussian => GAUSS_OUT,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossHead::L2 => "l2",
            LossHead::Gaussian => "gauss",
        }
    }
}

/// One step of the Gaussian head's output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussStep<S> {
    pub mu: [S; 2],
    pub sigma: [S; 2],
    pub rho: S,
    pub z: S,
}

/// A decoded future trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction<S> {
    Points(Vec<[S; 3]>),
    Gauss(Vec<GaussStep<S>>),
}

impl<S: Scalar> Prediction<S> {
    pub fn len(&self) -> usize {
        match self {
            Prediction::Points(p) => p.len(),
            Prediction::Gauss(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Collapses either head to per-step points: the Gaussian head's
    /// estimate is (μx, μy, ẑ).
    pub fn point_estimate(&self) -> Vec<[S; 3]> {
        match self {
            Prediction::Points(p) => p.clone(),
            Prediction::Gauss(g) => g
                .iter()
                .map(|st| [st.mu[0], st.mu[1], st.z])
                .collect(),
        }
    }

    pub fn gauss_steps(&self) -> Option<&[GaussStep<S>]> {
        match self {
            Prediction::Gauss(g) => Some(g),
            Prediction::Points(_) => None,
        }
    }
}

struct DecodeStep<S> {
    lstm: LstmStepCache<S>,
    /// LSTM output at this step — the head's input.
    h_out: Vec<S>,
}

/// Forward cache for backpropagation. Only teacher-forced rollouts can be
/// backpropagated: in free-running mode each input depends on earlier
/// parameters, a path training never uses.
pub struct DecodeCache<S> {
    steps: Vec<DecodeStep<S>>,
    teacher_mode: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Decoder {
    pub head: LossHead,
    /// Boundary scale: inputs are divided by it, raw positions multiplied.
    pub scale: f64,
}

impl Decoder {
    pub fn new(head: LossHead, scale: f64) -> Decoder {
        Decoder { head, scale }
    }

    pub fn register_params<S: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (DEC_HIDDEN as f64).sqrt();
        store.insert_uniform(W_IH, &[4 * DEC_HIDDEN, 3], bound, rng)?;
        store.insert_uniform(W_HH, &[4 * DEC_HIDDEN, DEC_HIDDEN], bound, rng)?;
        let mut bias = Tensor::zeros(&[4 * DEC_HIDDEN]);
        for j in 0..DEC_HIDDEN {
            bias.data_mut()[DEC_HIDDEN + j] = s(1.0);
        }
        store.insert(BIAS, bias)?;
        let (w_name, b_name) = self.head_names();
        store.insert_uniform(w_name, &[self.head.out_dim(), DEC_HIDDEN], bound, rng)?;
        store.insert(b_name, Tensor::zeros(&[self.head.out_dim()]))
    }

    fn head_names(&self) -> (&'static str, &'static str) {
        match self.head {
            LossHead::L2 => (L2_W, L2_B),
            LossHead::Gaussian => (GAUSS_W, GAUSS_B),
        }
    }

    fn weights<'a, S: Scalar>(&self, store: &'a ParamStore<S>) -> LstmWeights<'a, S> {
        LstmWeights {
            w_ih: store.param(W_IH),
            w_hh: store.param(W_HH),
            bias: store.param(BIAS),
        }
    }

    fn scale_in<S: Scalar>(&self, p: [S; 3]) -> [S; 3] {
        let inv: S = s(1.0 / self.scale);
        [p[0] * inv, p[1] * inv, p[2] * inv]
    }

    fn raw_to_output<S: Scalar>(&self, raw: &[S]) -> ([S; 3], Option<GaussStep<S>>) {
        let sc: S = s(self.scale);
        match self.head {
            LossHead::L2 => ([raw[0] * sc, raw[1] * sc, raw[2] * sc], None),
            LossHead::Gaussian => {
                let step = GaussStep {
                    mu: [raw[0] * sc, raw[1] * sc],
                    sigma: [raw[2].exp(), raw[3].exp()],
                    rho: raw[4].tanh(),
                    z: raw[5] * sc,
                };
                ([step.mu[0], step.mu[1], step.z], Some(step))
            }
        }
    }

    /// Rolls out `t_f` future steps. With `teacher` given (training), step
    /// inputs are the ground-truth positions; without it the decoder feeds
    /// its own point estimates back, so a teacher equal to a previous
    /// free rollout reproduces that rollout bit-exactly.
    pub fn decode<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        fused: &[S],
        last_observed: [S; 3],
        t_f: usize,
        teacher: Option<&[[S; 3]]>,
    ) -> Result<(Prediction<S>, DecodeCache<S>)> {
        if fused.len() != DEC_HIDDEN {
            return Err(CoreError::Shape {
                op: "decode",
                detail: format!("fused feature length {}, expected {DEC_HIDDEN}", fused.len()),
            });
        }
        if t_f == 0 {
            return Err(CoreError::Invalid("decode requires t_f >= 1".to_string()));
        }
        if let Some(gt) = teacher {
            if gt.len() != t_f {
                return Err(CoreError::Shape {
                    op: "decode",
                    detail: format!("teacher length {} != t_f {t_f}", gt.len()),
                });
            }
        }
        let w = self.weights(store);
        let (w_name, b_name) = self.head_names();
        let head_w = store.param(w_name);
        let head_b = store.param(b_name);

        let mut h = fused.to_vec();
        let mut c = vec![S::zero(); DEC_HIDDEN];
        let mut x = self.scale_in(last_observed);
        let mut steps = Vec::with_capacity(t_f);
        let mut points = Vec::with_capacity(t_f);
        let mut gauss = Vec::with_capacity(t_f);
        for t in 0..t_f {
            let (h_new, c_new, lstm) = lstm_cell_forward(&x, &h, &c, &w)?;
            let raw = dense_forward(&h_new, head_w, head_b)?;
            let (point, g) = self.raw_to_output(&raw);
            if let Some(gs) = g {
                gauss.push(gs);
            }
            points.push(point);
            steps.push(DecodeStep {
                lstm,
                h_out: h_new.clone(),
            });
            x = match teacher {
                Some(gt) => self.scale_in(gt[t]),
                None => self.scale_in(point),
            };
            h = h_new;
            c = c_new;
        }
        let prediction = match self.head {
            LossHead::L2 => Prediction::Points(points),
            LossHead::Gaussian => Prediction::Gauss(gauss),
        };
        Ok((
            prediction,
            DecodeCache {
                steps,
                teacher_mode: teacher.is_some(),
            },
        ))
    }

    /// Maps gradients w.r.t. the head's transformed outputs to gradients
    /// w.r.t. the raw outputs.
    ///
    /// * L2: `d_output` rows are (dx, dy, dz) per step.
    /// * Gaussian: rows are (dμx, dμy, dσx, dσy, dρ, dẑ) per step, and
    ///   `prediction` supplies the σ/ρ values for the exp/tanh chain rules.
    pub fn output_grad_to_raw<S: Scalar>(
        &self,
        prediction: &Prediction<S>,
        d_output: &[Vec<S>],
    ) -> Result<Vec<Vec<S>>> {
        let sc: S = s(self.scale);
        match (self.head, prediction) {
            (LossHead::L2, Prediction::Points(_)) => Ok(d_output
                .iter()
                .map(|d| d.iter().map(|&v| v * sc).collect())
                .collect()),
            (LossHead::Gaussian, Prediction::Gauss(steps)) => {
                if steps.len() != d_output.len() {
                    return Err(CoreError::Shape {
                        op: "output_grad_to_raw",
                        detail: format!("{} gradient rows for {} steps", d_output.len(), steps.len()),
                    });
                }
                Ok(steps
                    .iter()
                    .zip(d_output.iter())
                    .map(|(st, d)| {
                        vec![
                            d[0] * sc,
                            d[1] * sc,
                            d[2] * st.sigma[0],
                            d[3] * st.sigma[1],
                            d[4] * (S::one() - st.rho * st.rho),
                            d[5] * sc,
                        ]
                    })
                    .collect())
            }
            _ => Err(CoreError::Invalid(
                "prediction kind does not match the decoder head".to_string(),
            )),
        }
    }

    /// Backward through a teacher-forced rollout. `d_raw` holds per-step
    /// gradients w.r.t. the raw head outputs. Accumulates parameter
    /// gradients and returns the gradient w.r.t. the fused feature.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        d_raw: &[Vec<S>],
        cache: &DecodeCache<S>,
    ) -> Result<Vec<S>> {
        if !cache.teacher_mode {
            return Err(CoreError::Invalid(
                "decoder backward requires a teacher-forced cache".to_string(),
            ));
        }
        if d_raw.len() != cache.steps.len() {
            return Err(CoreError::Shape {
                op: "decode_backward",
                detail: format!(
                    "{} gradient rows for {} steps",
                    d_raw.len(),
                    cache.steps.len()
                ),
            });
        }
        let (w_name, b_name) = self.head_names();
        let out_dim = self.head.out_dim();
        let mut dw_ih = Tensor::zeros(&[4 * DEC_HIDDEN, 3]);
        let mut dw_hh = Tensor::zeros(&[4 * DEC_HIDDEN, DEC_HIDDEN]);
        let mut db = Tensor::zeros(&[4 * DEC_HIDDEN]);
        let mut dhead_w = Tensor::zeros(&[out_dim, DEC_HIDDEN]);
        let mut dhead_b = Tensor::zeros(&[out_dim]);
        let d_fused;
        {
            let w = self.weights(store);
            let head_w = store.param(w_name);
            let mut dh_next = vec![S::zero(); DEC_HIDDEN];
            let mut dc_next = vec![S::zero(); DEC_HIDDEN];
            for (step, d) in cache.steps.iter().zip(d_raw.iter()).rev() {
                if d.len() != out_dim {
                    return Err(CoreError::Shape {
                        op: "decode_backward",
                        detail: format!("gradient row length {}, expected {out_dim}", d.len()),
                    });
                }
                let head = dense_backward(d, &step.h_out, head_w);
                dhead_w.add_scaled(&head.dw, S::one())?;
                dhead_b.add_scaled(&head.db, S::one())?;
                let mut dh = head.dx;
                for (a, b) in dh.iter_mut().zip(dh_next.iter()) {
                    *a += *b;
                }
                let grads = lstm_cell_backward(&dh, &dc_next, &w, &step.lstm);
                dw_ih.add_scaled(&grads.dw_ih, S::one())?;
                dw_hh.add_scaled(&grads.dw_hh, S::one())?;
                db.add_scaled(&grads.db, S::one())?;
                dh_next = grads.dh_prev;
                dc_next = grads.dc_prev;
            }
            d_fused = dh_next;
        }
        store.accumulate_grad(W_IH, &dw_ih)?;
        store.accumulate_grad(W_HH, &dw_hh)?;
        store.accumulate_grad(BIAS, &db)?;
        store.accumulate_grad(w_name, &dhead_w)?;
        store.accumulate_grad(b_name, &dhead_b)?;
        Ok(d_fused)
    }
}
