//! Training loop (Adam + staircase learning-rate decay + early stopping),
//! checkpoint-level evaluation with throughput measurement, the ablation
//! matrix, and the horizon sweep.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::error::{CoreError, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{FusionKind, Model, ModelConfig};
use crate::num::{to_f64, Scalar};
use crate::params::ParamStore;
use crate::scene::{
    build_batch, extract_instances, ExtractConfig, ExtractReport, PredictionInstance, Scene,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    /// Staircase decay: lr is multiplied by this factor...
    pub lr_decay_factor: f64,
    /// ...once per this many epochs.
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Validation ADE must improve by at least this much to count.
    pub early_stop_min_delta: f64,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 0.001,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            batch_size: 256,
            max_epochs: 40,
            seed: 0,
            early_stop_min_delta: 1e-3,
            early_stop_patience: 15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(CoreError::Config(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every == 0
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.early_stop_patience == 0
        {
            return Err(CoreError::Config(
                "lr_decay_every, batch_size, max_epochs, early_stop_patience must be >= 1"
                    .to_string(),
            ));
        }
        if !(self.early_stop_min_delta >= 0.0) {
            return Err(CoreError::Config(
                "early_stop_min_delta must be >= 0".to_string(),
            ));
        }
        Ok(())
    }

    /// Staircase schedule: the base rate for epochs 0..decay_every, one
    /// factor applied per completed interval after that.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            t_h: self.model.t_h,
            t_f: self.model.t_f,
            m: self.model.m,
            k: self.model.k,
        }
    }
}

/// One learning-curve row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ade: f64,
}

pub fn learning_curve_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss,val_ade\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.lr, r.train_loss, r.val_loss, r.val_ade
        ));
    }
    out
}

pub fn write_learning_curve(path: &Path, rows: &[EpochRow]) -> Result<()> {
    std::fs::write(path, learning_curve_csv(rows))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Parameters of the epoch with the lowest validation ADE.
    pub store: ParamStore<S>,
    pub best_epoch: usize,
    pub best_val_ade: f64,
    pub curve: Vec<EpochRow>,
    pub stopped_early: bool,
}

/// Evaluation batches are capped at this many instances to bound peak
/// memory; results are independent of the cap.
const EVAL_CHUNK: usize = 256;

fn val_pass<S: Scalar>(
    model: &Model,
    store: &ParamStore<S>,
    val: &[PredictionInstance],
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut preds: Vec<Vec<[f64; 3]>> = Vec::with_capacity(val.len());
    let mut gts: Vec<Vec<[f64; 3]>> = Vec::with_capacity(val.len());
    for chunk in val.chunks(EVAL_CHUNK) {
        let batch = build_batch::<S>(chunk, model.cfg.k)?;
        let (loss, _) = model.loss_batch(store, &batch)?;
        loss_sum += to_f64(loss) * chunk.len() as f64;
        for (pred, inst) in model.predict(store, &batch)?.iter().zip(chunk) {
            preds.push(
                pred.point_estimate()
                    .iter()
                    .map(|p| [to_f64(p[0]), to_f64(p[1]), to_f64(p[2])])
                    .collect(),
            );
            gts.push(inst.ground_truth.clone());
        }
    }
    Ok((loss_sum / val.len() as f64, metrics::ade(&preds, &gts)?))
}

/// Trains to convergence or `max_epochs`, whichever comes first, and
/// returns the best-validation parameters with the learning curve.
///
/// Deterministic: one seed fixes initialization, batch order, and therefore
/// every parameter bit.
pub fn train<S: Scalar>(
    cfg: &TrainConfig,
    train_set: &[PredictionInstance],
    val_set: &[PredictionInstance],
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CoreError::Invalid(
            "training requires non-empty train and validation sets".to_string(),
        ));
    }
    let model = Model::new(cfg.model)?;
    let mut store: ParamStore<S> = model.init_params(cfg.seed)?;
    let mut adam: Adam<S> = Adam::new(AdamConfig::default());
    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5u64 << 60));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut curve = Vec::new();
    let mut best: Option<(ParamStore<S>, usize, f64)> = None;
    let mut delta_baseline = f64::INFINITY;
    let mut since_improvement = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffler);
        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let insts: Vec<PredictionInstance> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let batch = build_batch::<S>(&insts, cfg.model.k)?;
            // Exploded parameters surface either as a NonFinite error from
            // inside the loss or as a non-finite loss value; both mean the
            // run diverged.
            let (loss, fwd) = match model.loss_batch(&store, &batch) {
                Ok(pair) => pair,
                Err(CoreError::NonFinite(_)) => {
                    return Err(CoreError::Diverged {
                        epoch,
                        batch: batch_index,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            let loss_f = to_f64(loss);
            if !loss_f.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    batch: batch_index,
                    loss: loss_f,
                });
            }
            model.backward_batch(&mut store, &batch, &fwd)?;
            adam.step(&mut store, lr)?;
            store.zero_grads();
            loss_sum += loss_f * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_ade) = match val_pass(&model, &store, val_set) {
            Ok(pair) => pair,
            Err(CoreError::NonFinite(_)) => {
                return Err(CoreError::Diverged {
                    epoch,
                    batch: 0,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        if !val_loss.is_finite() || !val_ade.is_finite() {
            return Err(CoreError::Diverged {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        curve.push(EpochRow {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_ade,
        });

        if best.as_ref().map_or(true, |(_, _, b)| val_ade < *b) {
            best = Some((store.clone(), epoch, val_ade));
        }
        if delta_baseline - val_ade >= cfg.early_stop_min_delta {
            delta_baseline = val_ade;
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (store, best_epoch, best_val_ade) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        store,
        best_epoch,
        best_val_ade,
        curve,
        stopped_early,
    })
}

/// Extracts every prediction instance from a scene list.
pub fn extract_corpus(
    scenes: &[Scene],
    ec: &ExtractConfig,
) -> Result<(Vec<PredictionInstance>, ExtractReport)> {
    let mut all = Vec::new();
    let mut report = ExtractReport::default();
    for scene in scenes {
        let (mut insts, r) = extract_instances(scene, ec)?;
        all.append(&mut insts);
        report.instances += r.instances;
        report.skipped_targets += r.skipped_targets;
        report.out_of_region_neighbors += r.out_of_region_neighbors;
        report.cell_evictions += r.cell_evictions;
    }
    Ok((all, report))
}

/// Seeded 80/20-style split at scene granularity (no scene straddles the
/// boundary). `val_fraction` of the scenes, at least one when possible,
/// become validation.
pub fn split_scenes(
    scenes: &[Scene],
    val_fraction: f64,
    seed: u64,
) -> (Vec<Scene>, Vec<Scene>) {
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x511u64 << 48));
    order.shuffle(&mut rng);
    let mut n_val = ((scenes.len() as f64) * val_fraction).floor() as usize;
    if n_val == 0 && scenes.len() > 1 && val_fraction > 0.0 {
        n_val = 1;
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize]| -> Vec<Scene> {
        let mut sorted: Vec<usize> = idx.to_vec();
        sorted.sort_unstable();
        sorted.iter().map(|&i| scenes[i].clone()).collect()
    };
    (pick(train_idx), pick(val_idx))
}

/// Trains from raw scenes: extracts instances on both sides of the split.
pub fn train_on_scenes<S: Scalar>(
    cfg: &TrainConfig,
    train_scenes: &[Scene],
    val_scenes: &[Scene],
) -> Result<TrainOutcome<S>> {
    let ec = cfg.extract_config();
    let (train_insts, _) = extract_corpus(train_scenes, &ec)?;
    let (val_insts, _) = extract_corpus(val_scenes, &ec)?;
    train(cfg, &train_insts, &val_insts)
}

/// Evaluates frozen parameters over an instance list. With
/// `throughput_calls = Some(n)`, times at least n (and at least 1000)
/// single-instance prediction calls — batch assembly and grid construction
/// included — and reports calls per second.
pub fn evaluate<S: Scalar>(
    model: &Model,
    store: &ParamStore<S>,
    instances: &[PredictionInstance],
    throughput_calls: Option<usize>,
) -> Result<MetricsReport> {
    if instances.is_empty() {
        return Err(CoreError::Invalid("evaluate requires at least one instance".to_string()));
    }
    let mut preds: Vec<Vec<[f64; 3]>> = Vec::with_capacity(instances.len());
    let mut gts: Vec<Vec<[f64; 3]>> = Vec::with_capacity(instances.len());
    let classes: Vec<_> = instances.iter().map(|i| i.target_class).collect();
    for chunk in instances.chunks(EVAL_CHUNK) {
        let batch = build_batch::<S>(chunk, model.cfg.k)?;
        for (pred, inst) in model.predict(store, &batch)?.iter().zip(chunk) {
            preds.push(
                pred.point_estimate()
                    .iter()
                    .map(|p| [to_f64(p[0]), to_f64(p[1]), to_f64(p[2])])
                    .collect(),
            );
            gts.push(inst.ground_truth.clone());
        }
    }
    let throughput = match throughput_calls {
        None => None,
        Some(n) => Some(measure_throughput(model, store, instances, n.max(1000))?),
    };
    MetricsReport::compute(&preds, &gts, &classes, throughput)
}

/// One exported prediction, serialized as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    /// Head name: "l2" or "gauss".
    pub head: String,
    pub points: Vec<[f64; 3]>,
    /// Per step [μx, μy, σx, σy, ρ, ẑ]; present only for the Gaussian head.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gauss: Option<Vec<[f64; 6]>>,
}

impl PredictionRecord {
    pub fn new<S: Scalar>(
        instance: &PredictionInstance,
        prediction: &crate::decoder::Prediction<S>,
        head: crate::decoder::LossHead,
    ) -> PredictionRecord {
        let points = prediction
            .point_estimate()
            .iter()
            .map(|p| [to_f64(p[0]), to_f64(p[1]), to_f64(p[2])])
            .collect();
        let gauss = prediction.gauss_steps().map(|steps| {
            steps
                .iter()
                .map(|g| {
                    [
                        to_f64(g.mu[0]),
                        to_f64(g.mu[1]),
                        to_f64(g.sigma[0]),
                        to_f64(g.sigma[1]),
                        to_f64(g.rho),
                        to_f64(g.z),
                    ]
                })
                .collect()
        });
        PredictionRecord {
            instance_id: format!(
                "{}:{}:{}",
                instance.scene_id, instance.anchor_t, instance.target_id
            ),
            head: head.name().to_string(),
            points,
            gauss,
        }
    }
}

/// Single-stream prediction rate in calls per second.
fn measure_throughput<S: Scalar>(
    model: &Model,
    store: &ParamStore<S>,
    instances: &[PredictionInstance],
    calls: usize,
) -> Result<f64> {
    let start = Instant::now();
    for c in 0..calls {
        let inst = instances[c % instances.len()].clone();
        let batch = build_batch::<S>(std::slice::from_ref(&inst), model.cfg.k)?;
        let _ = model.predict(store, &batch)?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(calls as f64 / elapsed.max(f64::MIN_POSITIVE))
}

/// The five architecture rows of the comparison table, in presentation
/// order. Names are load-bearing: reports print them verbatim.
pub const ABLATION_ROWS: [&str; 5] = [
    "VLSTM + CON",
    "VLSTM + SP",
    "VLSTM + SCNN",
    "LSTM+Attention+SCNN",
    "VLSTM+Attention+SCNN",
];

/// Maps a row name to its architecture, holding everything not named by
/// the row (head, dims, horizon) at the base config's values.
pub fn ablation_config(row: &str, base: &ModelConfig) -> Option<ModelConfig> {
    let cfg = match row {
        "VLSTM + CON" => ModelConfig {
            fusion: FusionKind::Con,
            attention: false,
            variable_length: true,
            ..*base
        },
        "VLSTM + SP" => ModelConfig {
            fusion: FusionKind::Sp,
            attention: false,
            variable_length: true,
            ..*base
        },
        "VLSTM + SCNN" => ModelConfig {
            fusion: FusionKind::Scnn,
            attention: false,
            variable_length: true,
            ..*base
        },
        "LSTM+Attention+SCNN" => ModelConfig {
            fusion: FusionKind::Scnn,
            attention: true,
            variable_length: false,
            ..*base
        },
        "VLSTM+Attention+SCNN" => ModelConfig {
            fusion: FusionKind::Scnn,
            attention: true,
            variable_length: true,
            ..*base
        },
        _ => return None,
    };
    Some(cfg)
}

/// Trains and evaluates every ablation row with a shared seed and split.
pub fn ablation_matrix<S: Scalar>(
    cfg: &TrainConfig,
    train_set: &[PredictionInstance],
    val_set: &[PredictionInstance],
    test_set: &[PredictionInstance],
) -> Result<Vec<(String, MetricsReport)>> {
    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for row in ABLATION_ROWS {
        let row_cfg = TrainConfig {
            model: ablation_config(row, &cfg.model).expect("known row"),
            ..*cfg
        };
        let outcome = train::<S>(&row_cfg, train_set, val_set)?;
        let model = Model::new(row_cfg.model)?;
        let report = evaluate(&model, &outcome.store, test_set, None)?;
        rows.push((row.to_string(), report));
    }
    Ok(rows)
}

/// Retrains and evaluates at each future horizon; extraction reruns per
/// horizon because the ground-truth window changes length.
pub fn horizon_sweep<S: Scalar>(
    cfg: &TrainConfig,
    scenes: &[Scene],
    horizons: &[usize],
    val_fraction: f64,
) -> Result<Vec<(usize, MetricsReport)>> {
    let mut out = Vec::with_capacity(horizons.len());
    for &t_f in horizons {
        let sweep_cfg = TrainConfig {
            model: ModelConfig { t_f, ..cfg.model },
            ..*cfg
        };
        let (train_scenes, val_scenes) = split_scenes(scenes, val_fraction, cfg.seed);
        let ec = sweep_cfg.extract_config();
        let (train_insts, _) = extract_corpus(&train_scenes, &ec)?;
        let (val_insts, _) = extract_corpus(&val_scenes, &ec)?;
        let outcome = train::<S>(&sweep_cfg, &train_insts, &val_insts)?;
        let model = Model::new(sweep_cfg.model)?;
        let report = evaluate(&model, &outcome.store, &val_insts, None)?;
        out.push((t_f, report));
    }
    Ok(out)
}
