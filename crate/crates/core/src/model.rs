//! The assembled forecasting model: shared track encoder → social fusion →
//! LSTM decoder, with a switchable fusion path and output head.
//!
//! A [`ModelConfig`] fully determines the architecture and is stored in the
//! checkpoint metadata, so a saved model reloads without external
//! configuration and refuses checkpoints written under a different shape.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::decoder::{DecodeCache, Decoder, LossHead, Prediction};
use crate::encoder::{BatchEncodings, Encoder, EncoderMode, ENC_DIM};
use crate::error::{CoreError, Result};
use crate::fusion::{
    build_social_map, social_map_backward, ConCache, ConFuser, MaskCache, MaskMode, MaskNet,
    ScnnCache, ScnnFuser, SpCache, SpFuser, CON_SLOTS, FUSED_DIM, SOCIAL_DIM,
};
use crate::loss::{gaussian_nll, gaussian_nll_backward, l2_loss, l2_loss_backward};
use crate::num::{s, Scalar};
use crate::params::ParamStore;
use crate::scene::SceneBatch;

/// How neighbor information is reduced to the social feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Masked social map through the convolution stack (the full model).
    Scnn,
    /// Masked social map sum-pooled over the grid.
    Sp,
    /// Nearest-neighbor encodings concatenated into fixed slots.
    Con,
    /// Social feature pinned to zero (the no-interaction baseline).
    None,
}

impl FusionKind {
    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Scnn => "scnn",
            FusionKind::Sp => "sp",
            FusionKind::Con => "con",
            FusionKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub head: LossHead,
    pub fusion: FusionKind,
    /// Learned attention mask; without it grid fusers use the uniform mask.
    pub attention: bool,
    /// Variable-length track encoding; off = zero-prefixed fixed windows.
    pub variable_length: bool,
    pub t_h: usize,
    pub t_f: usize,
    /// Observable region side length, meters.
    pub m: f64,
    /// Grid resolution per side.
    pub k: usize,
    /// Weight of the squared z error in the Gaussian loss.
    pub lambda_z: f64,
    /// Slots in the concatenation fuser.
    pub con_slots: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            head: LossHead::L2,
            fusion: FusionKind::Scnn,
            attention: true,
            variable_length: true,
            t_h: 5,
            t_f: 5,
            m: 30.0,
            k: 11,
            lambda_z: 1.0,
            con_slots: CON_SLOTS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_h == 0 || self.t_f == 0 {
            return Err(CoreError::Config("t_h and t_f must be >= 1".to_string()));
        }
        if !(self.m > 0.0 && self.m.is_finite()) || self.k == 0 {
            return Err(CoreError::Config(format!(
                "grid requires finite m > 0 and k >= 1, got m={}, k={}",
                self.m, self.k
            )));
        }
        if !(self.lambda_z >= 0.0 && self.lambda_z.is_finite()) {
            return Err(CoreError::Config(format!(
                "lambda_z must be finite and >= 0, got {}",
                self.lambda_z
            )));
        }
        if self.fusion == FusionKind::Con && self.con_slots == 0 {
            return Err(CoreError::Config(
                "concatenation fusion requires con_slots >= 1".to_string(),
            ));
        }
        if self.fusion == FusionKind::Scnn {
            // Surface an unworkable grid resolution at config time.
            ScnnFuser::new(self.k).check_geometry()?;
        }
        Ok(())
    }

    /// Positions are divided by this at every model boundary.
    pub fn input_scale(&self) -> f64 {
        self.m / 2.0
    }

    /// Encodes the full architecture into checkpoint metadata.
    pub fn to_meta(&self) -> BTreeMap<String, f64> {
        let mut meta = BTreeMap::new();
        let head = match self.head {
            LossHead::L2 => 0.0,
            LossHead::Gaussian => 1.0,
        };
        let fusion = match self.fusion {
            FusionKind::Scnn => 0.0,
            FusionKind::Sp => 1.0,
            FusionKind::Con => 2.0,
            FusionKind::None => 3.0,
        };
        meta.insert("head".to_string(), head);
        meta.insert("fusion".to_string(), fusion);
        meta.insert("attention".to_string(), self.attention as u8 as f64);
        meta.insert(
            "variable_length".to_string(),
            self.variable_length as u8 as f64,
        );
        meta.insert("t_h".to_string(), self.t_h as f64);
        meta.insert("t_f".to_string(), self.t_f as f64);
        meta.insert("m".to_string(), self.m);
        meta.insert("k".to_string(), self.k as f64);
        meta.insert("lambda_z".to_string(), self.lambda_z);
        meta.insert("con_slots".to_string(), self.con_slots as f64);
        meta.insert("input_scale".to_string(), self.input_scale());
        meta
    }

    pub fn from_meta(meta: &BTreeMap<String, f64>) -> Result<ModelConfig> {
        let get = |key: &str| -> Result<f64> {
            meta.get(key).copied().ok_or_else(|| {
                CoreError::Checkpoint(format!("metadata missing `{key}`"))
            })
        };
        let as_usize = |key: &str| -> Result<usize> {
            let v = get(key)?;
            if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                return Err(CoreError::Checkpoint(format!(
                    "metadata `{key}` is not a valid count: {v}"
                )));
            }
            Ok(v as usize)
        };
        let as_bool = |key: &str| -> Result<bool> {
            match get(key)? {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(CoreError::Checkpoint(format!(
                    "metadata `{key}` is not a flag: {v}"
                ))),
            }
        };
        let head = match get("head")? {
            v if v == 0.0 => LossHead::L2,
            v if v == 1.0 => LossHead::Gaussian,
            v => {
                return Err(CoreError::Checkpoint(format!(
                    "metadata `head` code {v} unknown"
                )))
            }
        };
        let fusion = match get("fusion")? {
            v if v == 0.0 => FusionKind::Scnn,
            v if v == 1.0 => FusionKind::Sp,
            v if v == 2.0 => FusionKind::Con,
            v if v == 3.0 => FusionKind::None,
            v => {
                return Err(CoreError::Checkpoint(format!(
                    "metadata `fusion` code {v} unknown"
                )))
            }
        };
        let cfg = ModelConfig {
            head,
            fusion,
            attention: as_bool("attention")?,
            variable_length: as_bool("variable_length")?,
            t_h: as_usize("t_h")?,
            t_f: as_usize("t_f")?,
            m: get("m")?,
            k: as_usize("k")?,
            lambda_z: get("lambda_z")?,
            con_slots: as_usize("con_slots")?,
        };
        cfg.validate()?;
        let recorded = get("input_scale")?;
        if (recorded - cfg.input_scale()).abs() > 1e-9 {
            return Err(CoreError::Checkpoint(format!(
                "metadata `input_scale` {recorded} inconsistent with m/2 = {}",
                cfg.input_scale()
            )));
        }
        Ok(cfg)
    }
}

enum FusionCacheKind<S> {
    Scnn(ScnnCache<S>),
    Sp(SpCache<S>),
    Con(ConCache<S>),
    None,
}

/// Everything a forward pass produced, kept for loss and backward.
pub struct BatchForward<S> {
    pub predictions: Vec<Prediction<S>>,
    enc: BatchEncodings<S>,
    mask_caches: Vec<Option<MaskCache<S>>>,
    fusion_caches: Vec<FusionCacheKind<S>>,
    decode_caches: Vec<DecodeCache<S>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Model {
    pub cfg: ModelConfig,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        Ok(Model { cfg })
    }

    fn encoder(&self) -> Encoder {
        let mode = if self.cfg.variable_length {
            EncoderMode::VariableLength
        } else {
            EncoderMode::FixedLength { t_h: self.cfg.t_h }
        };
        Encoder::new(mode, self.cfg.input_scale())
    }

    fn mask_net(&self) -> MaskNet {
        let mode = if self.attention_active() {
            MaskMode::Learned
        } else {
            MaskMode::Uniform
        };
        MaskNet::new(self.cfg.k, mode)
    }

    fn decoder(&self) -> Decoder {
        Decoder::new(self.cfg.head, self.cfg.input_scale())
    }

    fn uses_grid(&self) -> bool {
        matches!(self.cfg.fusion, FusionKind::Scnn | FusionKind::Sp)
    }

    fn uses_neighbors(&self) -> bool {
        self.cfg.fusion != FusionKind::None
    }

    /// Attention only exists where a grid mask exists.
    fn attention_active(&self) -> bool {
        self.cfg.attention && self.uses_grid()
    }

    /// Fresh parameters, deterministic in the seed.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> Result<ParamStore<S>> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.encoder().register_params(&mut store, &mut rng)?;
        match self.cfg.fusion {
            FusionKind::Scnn => {
                ScnnFuser::new(self.cfg.k).register_params(&mut store, &mut rng)?
            }
            FusionKind::Sp => SpFuser::new(self.cfg.k).register_params(&mut store, &mut rng)?,
            FusionKind::Con => {
                ConFuser::new(self.cfg.con_slots).register_params(&mut store, &mut rng)?
            }
            FusionKind::None => {}
        }
        self.mask_net().register_params(&mut store, &mut rng)?;
        self.decoder().register_params(&mut store, &mut rng)?;
        Ok(store)
    }

    fn check_batch<S: Scalar>(&self, batch: &SceneBatch<S>) -> Result<()> {
        if batch.t_h != self.cfg.t_h || batch.t_f != self.cfg.t_f || batch.k != self.cfg.k {
            return Err(CoreError::Shape {
                op: "model_forward",
                detail: format!(
                    "batch (t_h={}, t_f={}, k={}) does not match config (t_h={}, t_f={}, k={})",
                    batch.t_h, batch.t_f, batch.k, self.cfg.t_h, self.cfg.t_f, self.cfg.k
                ),
            });
        }
        Ok(())
    }

    /// Runs the full pipeline over a batch. `teacher` switches the decoder
    /// between ground-truth inputs (training) and self-fed point estimates
    /// (inference).
    pub fn forward_batch<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        batch: &SceneBatch<S>,
        teacher: bool,
    ) -> Result<BatchForward<S>> {
        self.check_batch(batch)?;
        let encoder = self.encoder();
        let mask_net = self.mask_net();
        let decoder = self.decoder();
        let enc = encoder.encode_batch(store, batch, self.uses_neighbors())?;
        let b = batch.len();
        let n_b = batch.n_b;

        let mut predictions = Vec::with_capacity(b);
        let mut mask_caches = Vec::with_capacity(b);
        let mut fusion_caches = Vec::with_capacity(b);
        let mut decode_caches = Vec::with_capacity(b);
        for i in 0..b {
            let target_enc = &enc.target.data()[i * ENC_DIM..(i + 1) * ENC_DIM];
            let neighbor_rows = &enc.neighbors.data()[i * n_b * ENC_DIM..(i + 1) * n_b * ENC_DIM];
            let cells = &batch.neighbor_cell[i * n_b..(i + 1) * n_b];
            let valid = &batch.neighbor_valid[i * n_b..(i + 1) * n_b];
            let dist = &batch.neighbor_dist[i * n_b..(i + 1) * n_b];

            let (social, mask_cache, fusion_cache) = match self.cfg.fusion {
                FusionKind::Scnn => {
                    let (mask, mc) = mask_net.forward(store, target_enc)?;
                    let map = build_social_map(neighbor_rows, n_b, cells, valid, self.cfg.k)?;
                    let (social, fc) = ScnnFuser::new(self.cfg.k).forward(store, &map, &mask)?;
                    (social, mc, FusionCacheKind::Scnn(fc))
                }
                FusionKind::Sp => {
                    let (mask, mc) = mask_net.forward(store, target_enc)?;
                    let map = build_social_map(neighbor_rows, n_b, cells, valid, self.cfg.k)?;
                    let (social, fc) = SpFuser::new(self.cfg.k).forward(store, &map, &mask)?;
                    (social, mc, FusionCacheKind::Sp(fc))
                }
                FusionKind::Con => {
                    let (social, fc, _) = ConFuser::new(self.cfg.con_slots)
                        .forward(store, neighbor_rows, n_b, valid, dist)?;
                    (social, None, FusionCacheKind::Con(fc))
                }
                FusionKind::None => (
                    vec![S::zero(); SOCIAL_DIM],
                    None,
                    FusionCacheKind::None,
                ),
            };

            let mut fused = Vec::with_capacity(FUSED_DIM);
            fused.extend_from_slice(target_enc);
            fused.extend_from_slice(&social);
            let truth;
            let teacher_ref = if teacher {
                truth = batch.truth_of(i);
                Some(&truth[..])
            } else {
                None
            };
            let (pred, dc) = decoder.decode(
                store,
                &fused,
                batch.last_observed(i),
                batch.t_f,
                teacher_ref,
            )?;
            predictions.push(pred);
            mask_caches.push(mask_cache);
            fusion_caches.push(fusion_cache);
            decode_caches.push(dc);
        }
        Ok(BatchForward {
            predictions,
            enc,
            mask_caches,
            fusion_caches,
            decode_caches,
        })
    }

    /// Teacher-forced forward plus the batch loss (mean of per-instance
    /// losses under the configured head).
    pub fn loss_batch<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        batch: &SceneBatch<S>,
    ) -> Result<(S, BatchForward<S>)> {
        let fwd = self.forward_batch(store, batch, true)?;
        let mut total = S::zero();
        for (i, pred) in fwd.predictions.iter().enumerate() {
            let truth = batch.truth_of(i);
            total += match self.cfg.head {
                LossHead::L2 => l2_loss(&pred.point_estimate(), &truth)?,
                LossHead::Gaussian => {
                    gaussian_nll(pred.gauss_steps().ok_or_else(|| {
                        CoreError::Invalid("Gaussian loss on a point prediction".to_string())
                    })?, &truth, self.cfg.lambda_z)?
                }
            };
        }
        Ok((total / s(batch.len() as f64), fwd))
    }

    /// Accumulates parameter gradients of the batch loss.
    pub fn backward_batch<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        batch: &SceneBatch<S>,
        fwd: &BatchForward<S>,
    ) -> Result<()> {
        let encoder = self.encoder();
        let mask_net = self.mask_net();
        let decoder = self.decoder();
        let b = batch.len();
        let n_b = batch.n_b;
        let inv_b: S = s(1.0 / b as f64);

        for i in 0..b {
            let truth = batch.truth_of(i);
            let pred = &fwd.predictions[i];
            let mut d_out: Vec<Vec<S>> = match self.cfg.head {
                LossHead::L2 => l2_loss_backward(&pred.point_estimate(), &truth)
                    .into_iter()
                    .map(|row| row.to_vec())
                    .collect(),
                LossHead::Gaussian => gaussian_nll_backward(
                    pred.gauss_steps().ok_or_else(|| {
                        CoreError::Invalid("Gaussian loss on a point prediction".to_string())
                    })?,
                    &truth,
                    self.cfg.lambda_z,
                ),
            };
            for row in &mut d_out {
                for v in row {
                    *v *= inv_b;
                }
            }
            let d_raw = decoder.output_grad_to_raw(pred, &d_out)?;
            let d_fused = decoder.backward(store, &d_raw, &fwd.decode_caches[i])?;

            let mut d_target = d_fused[..ENC_DIM].to_vec();
            let d_social = &d_fused[ENC_DIM..];
            let mut d_neighbors = vec![S::zero(); n_b * ENC_DIM];
            let cells = &batch.neighbor_cell[i * n_b..(i + 1) * n_b];
            let valid = &batch.neighbor_valid[i * n_b..(i + 1) * n_b];
            match &fwd.fusion_caches[i] {
                FusionCacheKind::Scnn(fc) => {
                    let (d_map, d_mask) =
                        ScnnFuser::new(self.cfg.k).backward(store, d_social, fc)?;
                    social_map_backward(&d_map, cells, valid, &mut d_neighbors);
                    let from_mask =
                        mask_net.backward(store, &d_mask, fwd.mask_caches[i].as_ref())?;
                    for (a, v) in d_target.iter_mut().zip(from_mask) {
                        *a += v;
                    }
                }
                FusionCacheKind::Sp(fc) => {
                    let (d_map, d_mask) = SpFuser::new(self.cfg.k).backward(store, d_social, fc)?;
                    social_map_backward(&d_map, cells, valid, &mut d_neighbors);
                    let from_mask =
                        mask_net.backward(store, &d_mask, fwd.mask_caches[i].as_ref())?;
                    for (a, v) in d_target.iter_mut().zip(from_mask) {
                        *a += v;
                    }
                }
                FusionCacheKind::Con(fc) => {
                    ConFuser::new(self.cfg.con_slots).backward(
                        store,
                        d_social,
                        fc,
                        &mut d_neighbors,
                    )?;
                }
                FusionCacheKind::None => {}
            }

            encoder.encode_track_backward(store, &d_target, &fwd.enc.target_caches[i])?;
            for j in 0..n_b {
                let Some(cache) = &fwd.enc.neighbor_caches[i * n_b + j] else {
                    continue;
                };
                let d = &d_neighbors[j * ENC_DIM..(j + 1) * ENC_DIM];
                if d.iter().all(|v| v.is_zero()) {
                    continue;
                }
                encoder.encode_track_backward(store, d, cache)?;
            }
        }
        Ok(())
    }

    /// Inference: free-running decode for every instance.
    pub fn predict<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        batch: &SceneBatch<S>,
    ) -> Result<Vec<Prediction<S>>> {
        Ok(self.forward_batch(store, batch, false)?.predictions)
    }

    /// The k×k mask this model would weight the social map with for one
    /// instance (row-major). Only grid fusers carry a mask.
    pub fn mask_for<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        batch: &SceneBatch<S>,
        instance: usize,
    ) -> Result<Vec<S>> {
        if !self.uses_grid() {
            return Err(CoreError::Invalid(format!(
                "the {} fusion path has no grid mask",
                self.cfg.fusion.name()
            )));
        }
        self.check_batch(batch)?;
        if instance >= batch.len() {
            return Err(CoreError::Invalid(format!(
                "instance {instance} out of range for batch of {}",
                batch.len()
            )));
        }
        let enc = self.encoder().encode_batch(store, batch, false)?;
        let target_enc = &enc.target.data()[instance * ENC_DIM..(instance + 1) * ENC_DIM];
        let (mask, _) = self.mask_net().forward(store, target_enc)?;
        Ok(mask.data().to_vec())
    }

    /// Writes parameters plus the architecture metadata.
    pub fn save<S: Scalar>(&self, path: &Path, store: &ParamStore<S>) -> Result<()> {
        checkpoint::save(path, store, &self.cfg.to_meta())
    }

    /// Reads a checkpoint, reconstructs its architecture from metadata, and
    /// verifies the parameter set matches that architecture exactly.
    pub fn load<S: Scalar>(path: &Path) -> Result<(Model, ParamStore<S>)> {
        let (store, meta) = checkpoint::load::<S>(path)?;
        let cfg = ModelConfig::from_meta(&meta)?;
        let model = Model::new(cfg)?;
        let expected: ParamStore<S> = model.init_params(0)?;
        for (name, tensor) in expected.iter() {
            match store.get(name) {
                Ok(loaded) if loaded.shape() == tensor.shape() => {}
                Ok(loaded) => {
                    return Err(CoreError::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, architecture expects {:?}",
                        loaded.shape(),
                        tensor.shape()
                    )))
                }
                Err(_) => {
                    return Err(CoreError::Checkpoint(format!(
                        "checkpoint lacks parameter `{name}` required by its architecture"
                    )))
                }
            }
        }
        for name in store.names() {
            if expected.get(name).is_err() {
                return Err(CoreError::Checkpoint(format!(
                    "checkpoint carries parameter `{name}` unknown to its architecture"
                )));
            }
        }
        Ok((model, store))
    }
}
