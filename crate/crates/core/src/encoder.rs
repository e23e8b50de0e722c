//! Track encoder: one shared LSTM reads each agent's history (ego-frame
//! coordinates divided by a fixed input scale) and the final hidden state is
//! concatenated with the agent's class one-hot.
//!
//! Encoding layout: dims 0..17 = trajectory feature (LSTM hidden), dims
//! 17..20 = one-hot class. The variable-length mode runs exactly
//! `true_length` steps from the zero state; the fixed-length mode always
//! runs `t_h` steps, zero-prefixing shorter tracks (the weaker encoder used
//! as an ablation).

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::nn::lstm::{
    lstm_cell_backward, lstm_cell_forward, LstmStepCache, LstmWeights,
};
use crate::num::{s, Scalar};
use crate::params::ParamStore;
use crate::scene::{AgentClass, SceneBatch, CLASS_COUNT};
use crate::tensor::Tensor;

/// Trajectory-feature width (LSTM hidden size).
pub const TRAJ_DIM: usize = 17;
/// Full encoding width: trajectory feature ++ class one-hot.
pub const ENC_DIM: usize = TRAJ_DIM + CLASS_COUNT;
/// Input width: (x, y, z) per step.
pub const POS_DIM: usize = 3;

const W_IH: &str = "encoder.lstm.w_ih";
const W_HH: &str = "encoder.lstm.w_hh";
const BIAS: &str = "encoder.lstm.b";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// Run exactly the track's true length (the paper's dynamic encoder).
    VariableLength,
    /// Always run `t_h` steps with zero-prefix padding (ablation).
    FixedLength { t_h: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct Encoder {
    pub mode: EncoderMode,
    /// Positions are divided by this before entering the LSTM.
    pub input_scale: f64,
}

/// Per-track forward cache for backpropagation through time.
pub struct TrackCache<S> {
    steps: Vec<LstmStepCache<S>>,
}

/// Encodings and caches for a whole batch.
pub struct BatchEncodings<S> {
    /// (b, ENC_DIM)
    pub target: Tensor<S>,
    /// (b, n_b, ENC_DIM); invalid slots all-zero.
    pub neighbors: Tensor<S>,
    pub target_caches: Vec<TrackCache<S>>,
    pub neighbor_caches: Vec<Option<TrackCache<S>>>,
}

impl Encoder {
    pub fn new(mode: EncoderMode, input_scale: f64) -> Encoder {
        Encoder { mode, input_scale }
    }

    /// Registers the shared LSTM parameters.
    pub fn register_params<S: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (TRAJ_DIM as f64).sqrt();
        store.insert_uniform(W_IH, &[4 * TRAJ_DIM, POS_DIM], bound, rng)?;
        store.insert_uniform(W_HH, &[4 * TRAJ_DIM, TRAJ_DIM], bound, rng)?;
        // Bias starts at zero except the forget gate, opened to +1 so early
        // training does not wash the cell state out.
        let mut bias = Tensor::zeros(&[4 * TRAJ_DIM]);
        for j in 0..TRAJ_DIM {
            bias.data_mut()[TRAJ_DIM + j] = s(1.0);
        }
        store.insert(BIAS, bias)
    }

    fn weights<'a, S: Scalar>(&self, store: &'a ParamStore<S>) -> LstmWeights<'a, S> {
        LstmWeights {
            w_ih: store.param(W_IH),
            w_hh: store.param(W_HH),
            bias: store.param(BIAS),
        }
    }

    /// Builds the step-input sequence: scaled real positions, zero-prefixed
    /// in fixed-length mode.
    fn inputs<S: Scalar>(&self, positions: &[[S; 3]], true_length: usize) -> Vec<[S; 3]> {
        let inv: S = s(1.0 / self.input_scale);
        let scaled = positions[..true_length]
            .iter()
            .map(|p| [p[0] * inv, p[1] * inv, p[2] * inv]);
        match self.mode {
            EncoderMode::VariableLength => scaled.collect(),
            EncoderMode::FixedLength { t_h } => {
                let pad = t_h.saturating_sub(true_length);
                std::iter::repeat([S::zero(); 3])
                    .take(pad)
                    .chain(scaled)
                    .collect()
            }
        }
    }

    /// Encodes one track. `positions` may carry padding past `true_length`;
    /// it is never read.
    pub fn encode_track<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        positions: &[[S; 3]],
        true_length: usize,
        class: AgentClass,
    ) -> Result<(Vec<S>, TrackCache<S>)> {
        if true_length == 0 {
            return Err(CoreError::Invalid("encode_track requires true_length >= 1".to_string()));
        }
        if true_length > positions.len() {
            return Err(CoreError::Shape {
                op: "encode_track",
                detail: format!(
                    "true_length {} exceeds provided positions {}",
                    true_length,
                    positions.len()
                ),
            });
        }
        if let EncoderMode::FixedLength { t_h } = self.mode {
            if true_length > t_h {
                return Err(CoreError::Shape {
                    op: "encode_track",
                    detail: format!("true_length {true_length} exceeds fixed window {t_h}"),
                });
            }
        }
        let w = self.weights(store);
        let mut h = vec![S::zero(); TRAJ_DIM];
        let mut c = vec![S::zero(); TRAJ_DIM];
        let mut steps = Vec::with_capacity(true_length);
        for x in self.inputs(positions, true_length) {
            let (h_new, c_new, cache) = lstm_cell_forward(&x, &h, &c, &w)?;
            h = h_new;
            c = c_new;
            steps.push(cache);
        }
        let mut enc = vec![S::zero(); ENC_DIM];
        enc[..TRAJ_DIM].copy_from_slice(&h);
        enc[TRAJ_DIM + class.one_hot_index()] = S::one();
        Ok((enc, TrackCache { steps }))
    }

    /// Backpropagates a gradient w.r.t. one track's encoding into the shared
    /// LSTM parameters. The one-hot dims are constants, so only the first
    /// TRAJ_DIM components flow.
    pub fn encode_track_backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        d_encoding: &[S],
        cache: &TrackCache<S>,
    ) -> Result<()> {
        debug_assert_eq!(d_encoding.len(), ENC_DIM);
        let mut dw_ih = Tensor::zeros(&[4 * TRAJ_DIM, POS_DIM]);
        let mut dw_hh = Tensor::zeros(&[4 * TRAJ_DIM, TRAJ_DIM]);
        let mut db = Tensor::zeros(&[4 * TRAJ_DIM]);
        {
            let w = self.weights(store);
            let mut dh = d_encoding[..TRAJ_DIM].to_vec();
            let mut dc = vec![S::zero(); TRAJ_DIM];
            for step in cache.steps.iter().rev() {
                let grads = lstm_cell_backward(&dh, &dc, &w, step);
                dw_ih.add_scaled(&grads.dw_ih, S::one())?;
                dw_hh.add_scaled(&grads.dw_hh, S::one())?;
                db.add_scaled(&grads.db, S::one())?;
                dh = grads.dh_prev;
                dc = grads.dc_prev;
            }
        }
        store.accumulate_grad(W_IH, &dw_ih)?;
        store.accumulate_grad(W_HH, &dw_hh)?;
        store.accumulate_grad(BIAS, &db)?;
        Ok(())
    }

    /// Encodes every target — and, unless `with_neighbors` is off (the
    /// no-social baseline), every valid neighbor — with the shared
    /// parameters. Skipped or invalid neighbor slots stay all-zero.
    pub fn encode_batch<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        batch: &SceneBatch<S>,
        with_neighbors: bool,
    ) -> Result<BatchEncodings<S>> {
        let b = batch.len();
        let mut target = Tensor::zeros(&[b, ENC_DIM]);
        let mut neighbors = Tensor::zeros(&[b, batch.n_b, ENC_DIM]);
        let mut target_caches = Vec::with_capacity(b);
        let mut neighbor_caches = Vec::with_capacity(b * batch.n_b);

        let mut positions: Vec<[S; 3]> = Vec::new();
        for i in 0..b {
            positions.clear();
            for t in 0..batch.t_h {
                positions.push([
                    batch.target_history.at3(i, t, 0),
                    batch.target_history.at3(i, t, 1),
                    batch.target_history.at3(i, t, 2),
                ]);
            }
            let (enc, cache) =
                self.encode_track(store, &positions, batch.t_h, batch.target_class[i])?;
            for (d, &v) in enc.iter().enumerate() {
                target.set2(i, d, v);
            }
            target_caches.push(cache);

            for j in 0..batch.n_b {
                let slot = batch.slot(i, j);
                if !with_neighbors || !batch.neighbor_valid[slot] {
                    neighbor_caches.push(None);
                    continue;
                }
                positions.clear();
                for t in 0..batch.t_b {
                    positions.push([
                        batch.neighbors.at4(i, j, t, 0),
                        batch.neighbors.at4(i, j, t, 1),
                        batch.neighbors.at4(i, j, t, 2),
                    ]);
                }
                let (enc, cache) = self.encode_track(
                    store,
                    &positions,
                    batch.neighbor_len[slot],
                    batch.neighbor_class[slot],
                )?;
                for (d, &v) in enc.iter().enumerate() {
                    neighbors.set3(i, j, d, v);
                }
                neighbor_caches.push(Some(cache));
            }
        }
        Ok(BatchEncodings {
            target,
            neighbors,
            target_caches,
            neighbor_caches,
        })
    }
}
