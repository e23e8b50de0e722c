//! Social interaction fusion.
//!
//! Neighbor encodings are scattered onto a target-centered k×k grid (the
//! social map), weighted by an attention mask predicted from the target's
//! own encoding, and reduced to a fixed-width social feature. Three
//! reductions are provided:
//!
//! * [`ScnnFuser`] — two strided convolutions and a max-pool over the masked
//!   map, then a dense embedding (the full model's path).
//! * [`SpFuser`] — sum-pool the masked map over the grid, then a dense
//!   layer (ablation).
//! * [`ConFuser`] — concatenate the nearest neighbors' encodings into fixed
//!   slots, then a dense layer; ignores the grid entirely (ablation).

use rand::Rng;

use crate::encoder::ENC_DIM;
use crate::error::{CoreError, Result};
use crate::nn::activation::{softmax, softmax_backward};
use crate::nn::conv::{
    conv2d, conv2d_backward, maxpool2d_forward, PoolCache,
};
use crate::nn::dense::{dense_backward, dense_forward};
use crate::num::{s, Scalar};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Width of the social feature (matches the encoding width, so the decoder
/// state is the simple concatenation of the two).
pub const SOCIAL_DIM: usize = ENC_DIM;
/// Decoder initial-state width: target encoding ++ social feature.
pub const FUSED_DIM: usize = ENC_DIM + SOCIAL_DIM;
/// Nearest-neighbor slots used by the concatenation fuser.
pub const CON_SLOTS: usize = 8;

const MASK_W: &str = "fusion.mask_fc.w";
const MASK_B: &str = "fusion.mask_fc.b";
const C1_K: &str = "fusion.conv1.kernel";
const C1_B: &str = "fusion.conv1.b";
const C2_K: &str = "fusion.conv2.kernel";
const C2_B: &str = "fusion.conv2.b";
const EMB_W: &str = "fusion.embed_fc.w";
const EMB_B: &str = "fusion.embed_fc.b";
const SP_W: &str = "fusion_sp.fc.w";
const SP_B: &str = "fusion_sp.fc.b";
const CON_W: &str = "fusion_con.fc.w";
const CON_B: &str = "fusion_con.fc.b";

const C1_OUT: usize = 64;
const C2_OUT: usize = 16;

/// Scatters neighbor encodings onto the k×k grid. `encodings` is row-major
/// (n, ENC_DIM); invalid rows are skipped. Two valid neighbors in one cell
/// is an error — extraction guarantees per-cell uniqueness upstream.
pub fn build_social_map<S: Scalar>(
    encodings: &[S],
    n: usize,
    cells: &[(usize, usize)],
    valid: &[bool],
    k: usize,
) -> Result<Tensor<S>> {
    if encodings.len() != n * ENC_DIM || cells.len() != n || valid.len() != n {
        return Err(CoreError::Shape {
            op: "build_social_map",
            detail: format!(
                "n={n} but encodings={}, cells={}, valid={}",
                encodings.len(),
                cells.len(),
                valid.len()
            ),
        });
    }
    let mut map = Tensor::zeros(&[k, k, ENC_DIM]);
    let mut occupied = vec![false; k * k];
    for j in 0..n {
        if !valid[j] {
            continue;
        }
        let (row, col) = cells[j];
        if row >= k || col >= k {
            return Err(CoreError::Invalid(format!(
                "neighbor cell ({row}, {col}) outside {k}x{k} grid"
            )));
        }
        if occupied[row * k + col] {
            return Err(CoreError::Invalid(format!(
                "two neighbors scattered into cell ({row}, {col})"
            )));
        }
        occupied[row * k + col] = true;
        for d in 0..ENC_DIM {
            map.set3(row, col, d, encodings[j * ENC_DIM + d]);
        }
    }
    Ok(map)
}

/// Scatters a social-map gradient back onto the neighbor-encoding gradient
/// buffer (row-major (n, ENC_DIM), accumulated in place).
pub fn social_map_backward<S: Scalar>(
    d_map: &Tensor<S>,
    cells: &[(usize, usize)],
    valid: &[bool],
    d_encodings: &mut [S],
) {
    let n = cells.len();
    debug_assert_eq!(d_encodings.len(), n * ENC_DIM);
    for j in 0..n {
        if !valid[j] {
            continue;
        }
        let (row, col) = cells[j];
        for d in 0..ENC_DIM {
            d_encodings[j * ENC_DIM + d] += d_map.at3(row, col, d);
        }
    }
}

/// The constant mask used when attention is disabled: every cell weighted
/// 1/k².
pub fn uniform_mask<S: Scalar>(k: usize) -> Tensor<S> {
    Tensor::filled(&[k, k], s(1.0 / (k * k) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// softmax(W e_target + b) reshaped to (k, k).
    Learned,
    /// Constant 1/k² everywhere (no-attention ablation).
    Uniform,
}

/// Produces the grid weighting applied to the social map.
#[derive(Debug, Clone, Copy)]
pub struct MaskNet {
    pub k: usize,
    pub mode: MaskMode,
}

pub struct MaskCache<S> {
    /// The target encoding the mask was computed from.
    input: Vec<S>,
    /// Softmax probabilities, length k².
    probs: Vec<S>,
}

impl MaskNet {
    pub fn new(k: usize, mode: MaskMode) -> MaskNet {
        MaskNet { k, mode }
    }

    pub fn register_params<S: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<S>,
        _rng: &mut R,
    ) -> Result<()> {
        if self.mode == MaskMode::Uniform {
            return Ok(());
        }
        // Zero logits start the softmax at the uniform prior, so the mask
        // departs from "weight every cell equally" only where training finds
        // a reason to. Random logits here make the early social map noise
        // the rest of the network first has to learn to ignore, and that
        // shows up as worse final error than the uniform mask itself.
        store.insert(MASK_W, Tensor::zeros(&[self.k * self.k, ENC_DIM]))?;
        store.insert(MASK_B, Tensor::zeros(&[self.k * self.k]))
    }

    /// Computes the (k, k) mask. The cache is `None` in uniform mode.
    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        target_enc: &[S],
    ) -> Result<(Tensor<S>, Option<MaskCache<S>>)> {
        if target_enc.len() != ENC_DIM {
            return Err(CoreError::Shape {
                op: "mask_forward",
                detail: format!("target encoding length {}", target_enc.len()),
            });
        }
        match self.mode {
            MaskMode::Uniform => Ok((uniform_mask(self.k), None)),
            MaskMode::Learned => {
                let logits = dense_forward(target_enc, store.param(MASK_W), store.param(MASK_B))?;
                let probs = softmax(&logits)?;
                let mask = Tensor::from_vec(&[self.k, self.k], probs.clone())?;
                Ok((
                    mask,
                    Some(MaskCache {
                        input: target_enc.to_vec(),
                        probs,
                    }),
                ))
            }
        }
    }

    /// Backward from a mask gradient to the target-encoding gradient,
    /// accumulating parameter gradients. Uniform masks are constants, so
    /// nothing flows.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        d_mask: &Tensor<S>,
        cache: Option<&MaskCache<S>>,
    ) -> Result<Vec<S>> {
        match (self.mode, cache) {
            (MaskMode::Uniform, _) => Ok(vec![S::zero(); ENC_DIM]),
            (MaskMode::Learned, Some(c)) => {
                let d_logits = softmax_backward(d_mask.data(), &c.probs);
                let grads = dense_backward(&d_logits, &c.input, store.param(MASK_W));
                store.accumulate_grad(MASK_W, &grads.dw)?;
                store.accumulate_grad(MASK_B, &grads.db)?;
                Ok(grads.dx)
            }
            (MaskMode::Learned, None) => Err(CoreError::Invalid(
                "mask backward requires the forward cache in learned mode".to_string(),
            )),
        }
    }
}

/// Spatial extents through the SCNN stack for grid resolution k:
/// conv 3×3 stride 2 pad 1, conv 5×5 stride 2 pad 2, max-pool 2×2 stride 2.
fn scnn_extents(k: usize) -> Result<(usize, usize, usize)> {
    let ext = |n: usize, kernel: usize, stride: usize, pad: usize| -> Option<usize> {
        (n + 2 * pad).checked_sub(kernel).map(|d| d / stride + 1)
    };
    let o1 = ext(k, 3, 2, 1);
    let o2 = o1.and_then(|n| ext(n, 5, 2, 2));
    let o3 = o2.and_then(|n| if n >= 2 { ext(n, 2, 2, 0) } else { None });
    match (o1, o2, o3) {
        (Some(a), Some(b), Some(c)) => Ok((a, b, c)),
        _ => Err(CoreError::Config(format!(
            "grid resolution {k} too small for the convolution stack"
        ))),
    }
}

/// Convolutional reduction of the masked social map.
#[derive(Debug, Clone, Copy)]
pub struct ScnnFuser {
    pub k: usize,
}

pub struct ScnnCache<S> {
    map: Tensor<S>,
    mask: Tensor<S>,
    masked: Tensor<S>,
    /// Pre-activation output of the first convolution (exposed so locality
    /// properties can be asserted on it).
    pub conv1_pre: Tensor<S>,
    conv1_post: Tensor<S>,
    pub conv2_out: Tensor<S>,
    pool_cache: PoolCache,
    pooled: Vec<S>,
}

impl ScnnFuser {
    pub fn new(k: usize) -> ScnnFuser {
        ScnnFuser { k }
    }

    fn embed_in_dim(&self) -> Result<usize> {
        let (_, _, o3) = scnn_extents(self.k)?;
        Ok(o3 * o3 * C2_OUT)
    }

    /// Fails when the grid is too small to survive the convolution stack.
    pub fn check_geometry(&self) -> Result<()> {
        self.embed_in_dim().map(|_| ())
    }

    pub fn register_params<S: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<()> {
        let embed_in = self.embed_in_dim()?;
        let b1 = 1.0 / ((3.0f64 * 3.0 * ENC_DIM as f64).sqrt());
        let b2 = 1.0 / ((5.0f64 * 5.0 * C1_OUT as f64).sqrt());
        let be = 1.0 / (embed_in as f64).sqrt();
        store.insert_uniform(C1_K, &[3, 3, ENC_DIM, C1_OUT], b1, rng)?;
        store.insert(C1_B, Tensor::zeros(&[C1_OUT]))?;
        store.insert_uniform(C2_K, &[5, 5, C1_OUT, C2_OUT], b2, rng)?;
        store.insert(C2_B, Tensor::zeros(&[C2_OUT]))?;
        store.insert_uniform(EMB_W, &[SOCIAL_DIM, embed_in], be, rng)?;
        store.insert(EMB_B, Tensor::zeros(&[SOCIAL_DIM]))
    }

    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        map: &Tensor<S>,
        mask: &Tensor<S>,
    ) -> Result<(Vec<S>, ScnnCache<S>)> {
        check_map_mask(map, mask, self.k)?;
        let mut masked = map.clone();
        apply_mask(&mut masked, mask);
        let conv1_pre = conv2d(&masked, store.param(C1_K), store.param(C1_B), 2, 1)?;
        let mut conv1_post = conv1_pre.clone();
        for v in conv1_post.data_mut() {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
        let conv2_out = conv2d(&conv1_post, store.param(C2_K), store.param(C2_B), 2, 2)?;
        let (pooled_t, pool_cache) = maxpool2d_forward(&conv2_out, 2, 2)?;
        let pooled = pooled_t.into_data();
        let social = dense_forward(&pooled, store.param(EMB_W), store.param(EMB_B))?;
        Ok((
            social,
            ScnnCache {
                map: map.clone(),
                mask: mask.clone(),
                masked,
                conv1_pre,
                conv1_post,
                conv2_out,
                pool_cache,
                pooled,
            },
        ))
    }

    /// Backward to (d_map, d_mask), accumulating parameter gradients.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        d_social: &[S],
        cache: &ScnnCache<S>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let (d_map, d_mask, demb_w, demb_b, dc2_k, dc2_b, dc1_k, dc1_b);
        {
            let emb = dense_backward(d_social, &cache.pooled, store.param(EMB_W));
            demb_w = emb.dw;
            demb_b = emb.db;
            let o3 = (cache.pool_cache.input_shape[0] - 2) / 2 + 1;
            let d_pooled = Tensor::from_vec(&[o3, o3, C2_OUT], emb.dx)?;
            let d_conv2_out = crate::nn::conv::maxpool2d_backward(&d_pooled, &cache.pool_cache);
            let g2 = conv2d_backward(&d_conv2_out, &cache.conv1_post, store.param(C2_K), 2, 2);
            dc2_k = g2.dkernel;
            dc2_b = g2.dbias;
            let mut d_conv1_pre = g2.dinput;
            for (dv, &pre) in d_conv1_pre.data_mut().iter_mut().zip(cache.conv1_pre.data()) {
                if pre <= S::zero() {
                    *dv = S::zero();
                }
            }
            let g1 = conv2d_backward(&d_conv1_pre, &cache.masked, store.param(C1_K), 2, 1);
            dc1_k = g1.dkernel;
            dc1_b = g1.dbias;
            let (dm, dk) = unmask_backward(&g1.dinput, &cache.map, &cache.mask);
            d_map = dm;
            d_mask = dk;
        }
        store.accumulate_grad(EMB_W, &demb_w)?;
        store.accumulate_grad(EMB_B, &demb_b)?;
        store.accumulate_grad(C2_K, &dc2_k)?;
        store.accumulate_grad(C2_B, &dc2_b)?;
        store.accumulate_grad(C1_K, &dc1_k)?;
        store.accumulate_grad(C1_B, &dc1_b)?;
        Ok((d_map, d_mask))
    }
}

/// Sum-pool reduction of the masked social map.
#[derive(Debug, Clone, Copy)]
pub struct SpFuser {
    pub k: usize,
}

pub struct SpCache<S> {
    map: Tensor<S>,
    mask: Tensor<S>,
    /// Σ_cells mask · map, length ENC_DIM — exactly linear in the mask.
    pub pooled: Vec<S>,
}

impl SpFuser {
    pub fn new(k: usize) -> SpFuser {
        SpFuser { k }
    }

    pub fn register_params<S: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (ENC_DIM as f64).sqrt();
        store.insert_uniform(SP_W, &[SOCIAL_DIM, ENC_DIM], bound, rng)?;
        store.insert(SP_B, Tensor::zeros(&[SOCIAL_DIM]))
    }

    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        map: &Tensor<S>,
        mask: &Tensor<S>,
    ) -> Result<(Vec<S>, SpCache<S>)> {
        check_map_mask(map, mask, self.k)?;
        let mut pooled = vec![S::zero(); ENC_DIM];
        for y in 0..self.k {
            for x in 0..self.k {
                let w = mask.at2(y, x);
                for d in 0..ENC_DIM {
                    pooled[d] += w * map.at3(y, x, d);
                }
            }
        }
        let social = dense_forward(&pooled, store.param(SP_W), store.param(SP_B))?;
        Ok((
            social,
            SpCache {
                map: map.clone(),
                mask: mask.clone(),
                pooled,
            },
        ))
    }

    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        d_social: &[S],
        cache: &SpCache<S>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let grads = dense_backward(d_social, &cache.pooled, store.param(SP_W));
        let d_pooled = grads.dx;
        store.accumulate_grad(SP_W, &grads.dw)?;
        store.accumulate_grad(SP_B, &grads.db)?;
        let mut d_map = Tensor::zeros(&[self.k, self.k, ENC_DIM]);
        let mut d_mask = Tensor::zeros(&[self.k, self.k]);
        for y in 0..self.k {
            for x in 0..self.k {
                let w = cache.mask.at2(y, x);
                let mut acc = S::zero();
                for d in 0..ENC_DIM {
                    d_map.set3(y, x, d, d_pooled[d] * w);
                    acc += d_pooled[d] * cache.map.at3(y, x, d);
                }
                d_mask.set2(y, x, acc);
            }
        }
        Ok((d_map, d_mask))
    }
}

/// Concatenation fuser: nearest neighbors (by anchor-frame distance) fill
/// fixed encoding slots; remaining slots stay zero. No grid, no mask.
#[derive(Debug, Clone, Copy)]
pub struct ConFuser {
    pub slots: usize,
}

pub struct ConCache<S> {
    /// Neighbor row index occupying each used slot, in slot order.
    pub chosen: Vec<usize>,
    concat: Vec<S>,
}

impl ConFuser {
    pub fn new(slots: usize) -> ConFuser {
        ConFuser { slots }
    }

    pub fn register_params<S: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<()> {
        let in_dim = self.slots * ENC_DIM;
        let bound = 1.0 / (in_dim as f64).sqrt();
        store.insert_uniform(CON_W, &[SOCIAL_DIM, in_dim], bound, rng)?;
        store.insert(CON_B, Tensor::zeros(&[SOCIAL_DIM]))
    }

    /// `encodings` is row-major (n, ENC_DIM). Returns the social feature,
    /// the cache, and how many valid neighbors were dropped for lack of
    /// slots.
    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        encodings: &[S],
        n: usize,
        valid: &[bool],
        distances: &[f64],
    ) -> Result<(Vec<S>, ConCache<S>, usize)> {
        if encodings.len() != n * ENC_DIM || valid.len() != n || distances.len() != n {
            return Err(CoreError::Shape {
                op: "fuse_con",
                detail: format!(
                    "n={n} but encodings={}, valid={}, distances={}",
                    encodings.len(),
                    valid.len(),
                    distances.len()
                ),
            });
        }
        let mut order: Vec<usize> = (0..n).filter(|&j| valid[j]).collect();
        order.sort_by(|&a, &b| {
            distances[a]
                .partial_cmp(&distances[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let dropped = order.len().saturating_sub(self.slots);
        order.truncate(self.slots);

        let mut concat = vec![S::zero(); self.slots * ENC_DIM];
        for (slot, &j) in order.iter().enumerate() {
            concat[slot * ENC_DIM..(slot + 1) * ENC_DIM]
                .copy_from_slice(&encodings[j * ENC_DIM..(j + 1) * ENC_DIM]);
        }
        let social = dense_forward(&concat, store.param(CON_W), store.param(CON_B))?;
        Ok((
            social,
            ConCache {
                chosen: order,
                concat,
            },
            dropped,
        ))
    }

    /// Backward; neighbor-encoding gradients are accumulated into
    /// `d_encodings` (row-major (n, ENC_DIM)) at the rows that filled slots.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        d_social: &[S],
        cache: &ConCache<S>,
        d_encodings: &mut [S],
    ) -> Result<()> {
        let grads = dense_backward(d_social, &cache.concat, store.param(CON_W));
        store.accumulate_grad(CON_W, &grads.dw)?;
        store.accumulate_grad(CON_B, &grads.db)?;
        for (slot, &j) in cache.chosen.iter().enumerate() {
            for d in 0..ENC_DIM {
                d_encodings[j * ENC_DIM + d] += grads.dx[slot * ENC_DIM + d];
            }
        }
        Ok(())
    }
}

fn check_map_mask<S: Scalar>(map: &Tensor<S>, mask: &Tensor<S>, k: usize) -> Result<()> {
    if map.shape() != [k, k, ENC_DIM] || mask.shape() != [k, k] {
        return Err(CoreError::Shape {
            op: "fuse",
            detail: format!(
                "expected map ({k}, {k}, {ENC_DIM}) and mask ({k}, {k}), got {:?} and {:?}",
                map.shape(),
                mask.shape()
            ),
        });
    }
    Ok(())
}

fn apply_mask<S: Scalar>(masked: &mut Tensor<S>, mask: &Tensor<S>) {
    let dims = masked.shape()[2];
    let md = masked.data_mut();
    for (cell, &w) in mask.data().iter().enumerate() {
        let base = cell * dims;
        for d in 0..dims {
            md[base + d] *= w;
        }
    }
}

/// Product-rule backward through `masked = map ⊙ mask`.
fn unmask_backward<S: Scalar>(
    d_masked: &Tensor<S>,
    map: &Tensor<S>,
    mask: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let dims = map.shape()[2];
    let mut d_map = Tensor::zeros(map.shape());
    let mut d_mask = Tensor::zeros(mask.shape());
    {
        let dm = d_map.data_mut();
        let dk = d_mask.data_mut();
        for (cell, &w) in mask.data().iter().enumerate() {
            let base = cell * dims;
            let mut acc = S::zero();
            for d in 0..dims {
                dm[base + d] = d_masked.data()[base + d] * w;
                acc += d_masked.data()[base + d] * map.data()[base + d];
            }
            dk[cell] = acc;
        }
    }
    (d_map, d_mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_param, check_param_sampled, max_block_rel_error, REL_FLOOR};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const K: usize = 11;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_encodings(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        (0..n * ENC_DIM).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    fn random_map(seed: u64) -> Tensor<f64> {
        let mut r = rng(seed);
        let mut t = Tensor::zeros(&[K, K, ENC_DIM]);
        for v in t.data_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn social_map_scatters_rows_at_their_cells_and_leaves_the_rest_zero() {
        let enc = random_encodings(3, 7);
        let cells = [(2, 9), (0, 0), (10, 4)];
        let valid = [true, false, true];
        let map = build_social_map(&enc, 3, &cells, &valid, K).unwrap();
        for d in 0..ENC_DIM {
            assert_eq!(map.at3(2, 9, d), enc[d]);
            assert_eq!(map.at3(10, 4, d), enc[2 * ENC_DIM + d]);
            // Invalid neighbor's cell stays empty.
            assert_eq!(map.at3(0, 0, d), 0.0);
        }
        let occupied = 2 * ENC_DIM;
        let nonzero = map.data().iter().filter(|&&v| v != 0.0).count();
        assert!(nonzero <= occupied);
    }

    #[test]
    fn social_map_rejects_cell_collisions_and_out_of_grid_cells() {
        let enc = random_encodings(2, 8);
        let same = [(3, 3), (3, 3)];
        assert!(build_social_map(&enc, 2, &same, &[true, true], K).is_err());
        // A collision with an invalid row is fine.
        assert!(build_social_map(&enc, 2, &same, &[true, false], K).is_ok());
        let outside = [(3, 3), (3, K)];
        assert!(build_social_map(&enc, 2, &outside, &[true, true], K).is_err());
    }

    #[test]
    fn social_map_backward_is_the_adjoint_of_the_scatter() {
        let enc = random_encodings(4, 9);
        let cells = [(1, 1), (5, 7), (0, 10), (9, 2)];
        let valid = [true, true, false, true];
        let map = build_social_map(&enc, 4, &cells, &valid, K).unwrap();
        let mut r = rng(10);
        let mut g = Tensor::<f64>::zeros(&[K, K, ENC_DIM]);
        for v in g.data_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
        let mut d_enc = vec![0.0; 4 * ENC_DIM];
        social_map_backward(&g, &cells, &valid, &mut d_enc);
        // <scatter(e), g> == <e, gather(g)>
        let lhs: f64 = map.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = enc.iter().zip(d_enc.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // The invalid row receives nothing.
        assert!(d_enc[2 * ENC_DIM..3 * ENC_DIM].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn learned_mask_is_a_distribution_over_cells() {
        let net = MaskNet::new(K, MaskMode::Learned);
        let mut store = ParamStore::<f64>::new();
        net.register_params(&mut store, &mut rng(11)).unwrap();
        // Normalization must hold anywhere in parameter space, not just at
        // the uniform starting point.
        let mut r = rng(11);
        for v in store.get_mut(MASK_W).unwrap().data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
        let target = random_encodings(1, 12);
        let (mask, cache) = net.forward(&store, &target).unwrap();
        assert_eq!(mask.shape(), [K, K]);
        assert!(cache.is_some());
        let sum: f64 = mask.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        assert!(mask.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn uniform_mask_weights_every_cell_equally() {
        let net = MaskNet::new(K, MaskMode::Uniform);
        let store = ParamStore::<f64>::new();
        let target = random_encodings(1, 13);
        let (mask, cache) = net.forward(&store, &target).unwrap();
        assert!(cache.is_none());
        for &v in mask.data() {
            assert_eq!(v, 1.0 / (K * K) as f64);
        }
        let sum: f64 = mask.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        // Constant: no gradient reaches the target encoding.
        let mut store_mut = store;
        let g = Tensor::filled(&[K, K], 0.3);
        let d = net.backward(&mut store_mut, &g, None).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_gradients_match_finite_differences() {
        let net = MaskNet::new(K, MaskMode::Learned);
        let mut store = ParamStore::<f64>::new();
        net.register_params(&mut store, &mut rng(14)).unwrap();
        // Check at a generic point: at the zero start the input gradient is
        // identically zero and the comparison would be vacuous there.
        let mut r = rng(14);
        for name in [MASK_W, MASK_B] {
            for v in store.get_mut(name).unwrap().data_mut() {
                *v = r.gen_range(-0.4..0.4);
            }
        }
        let target = random_encodings(1, 15);
        let mut r = rng(16);
        let probe: Vec<f64> = (0..K * K).map(|_| r.gen_range(-1.0..1.0)).collect();

        let (_, cache) = net.forward(&store, &target).unwrap();
        let g = Tensor::from_vec(&[K, K], probe.clone()).unwrap();
        let d_target = net.backward(&mut store, &g, cache.as_ref()).unwrap();

        let mut loss = |st: &ParamStore<f64>| -> f64 {
            let (m, _) = net.forward(st, &target).unwrap();
            m.data().iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
        };
        let coords: Vec<usize> = (0..store.get(MASK_W).unwrap().len()).step_by(97).collect();
        let rep = check_param_sampled(&mut store, MASK_W, &coords, 1e-5, &mut loss).unwrap();
        assert!(rep.max_rel < 1e-6, "mask w: {}", rep.max_rel);
        let rep = check_param(&mut store, MASK_B, 1e-5, &mut loss).unwrap();
        assert!(rep.max_rel < 1e-6, "mask b: {}", rep.max_rel);

        // Input gradient against finite differences.
        let mut t = target.clone();
        let mut fd = Vec::new();
        for i in 0..ENC_DIM {
            let orig = t[i];
            t[i] = orig + 1e-5;
            let (mp, _) = net.forward(&store, &t).unwrap();
            let lp: f64 = mp.data().iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
            t[i] = orig - 1e-5;
            let (mm, _) = net.forward(&store, &t).unwrap();
            let lm: f64 = mm.data().iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
            t[i] = orig;
            fd.push((lp - lm) / 2e-5);
        }
        assert!(max_block_rel_error(&d_target, &fd, REL_FLOOR) < 1e-6);
    }

    #[test]
    fn scnn_stack_has_the_documented_extents() {
        assert_eq!(scnn_extents(11).unwrap(), (6, 3, 1));
        assert!(scnn_extents(1).is_err());
    }

    #[test]
    fn scnn_shapes_flow_grid_to_social_feature() {
        let fuser = ScnnFuser::new(K);
        let mut store = ParamStore::<f64>::new();
        fuser.register_params(&mut store, &mut rng(17)).unwrap();
        let map = random_map(18);
        let mask = uniform_mask(K);
        let (social, cache) = fuser.forward(&store, &map, &mask).unwrap();
        assert_eq!(social.len(), SOCIAL_DIM);
        assert_eq!(cache.conv1_pre.shape(), [6, 6, C1_OUT]);
        assert_eq!(cache.conv2_out.shape(), [3, 3, C2_OUT]);
        assert_eq!(cache.pooled.len(), C2_OUT);
    }

    #[test]
    fn empty_map_produces_the_bias_path_value() {
        // Zero kernels isolate the bias path, making the output analytic:
        // conv1 -> 0.3, relu keeps it, conv2 -> -0.2, pool -> -0.2,
        // dense with an identity block -> -0.2 + 0.05 on the first 16 dims.
        let fuser = ScnnFuser::new(K);
        let mut store = ParamStore::<f64>::new();
        store.insert(C1_K, Tensor::zeros(&[3, 3, ENC_DIM, C1_OUT])).unwrap();
        store.insert(C1_B, Tensor::filled(&[C1_OUT], 0.3)).unwrap();
        store.insert(C2_K, Tensor::zeros(&[5, 5, C1_OUT, C2_OUT])).unwrap();
        store.insert(C2_B, Tensor::filled(&[C2_OUT], -0.2)).unwrap();
        let mut w = Tensor::zeros(&[SOCIAL_DIM, C2_OUT]);
        for d in 0..C2_OUT {
            w.set2(d, d, 1.0);
        }
        store.insert(EMB_W, w).unwrap();
        store.insert(EMB_B, Tensor::filled(&[SOCIAL_DIM], 0.05)).unwrap();

        let map = Tensor::zeros(&[K, K, ENC_DIM]);
        let (social, _) = fuser.forward(&store, &map, &uniform_mask(K)).unwrap();
        for d in 0..SOCIAL_DIM {
            let expected = if d < C2_OUT { -0.2 + 0.05 } else { 0.05 };
            assert_eq!(social[d], expected, "dim {d}");
        }
        // And with all parameters zero the feature is exactly zero.
        let mut zero_store = ParamStore::<f64>::new();
        zero_store.insert(C1_K, Tensor::zeros(&[3, 3, ENC_DIM, C1_OUT])).unwrap();
        zero_store.insert(C1_B, Tensor::zeros(&[C1_OUT])).unwrap();
        zero_store.insert(C2_K, Tensor::zeros(&[5, 5, C1_OUT, C2_OUT])).unwrap();
        zero_store.insert(C2_B, Tensor::zeros(&[C2_OUT])).unwrap();
        zero_store.insert(EMB_W, Tensor::zeros(&[SOCIAL_DIM, C2_OUT])).unwrap();
        zero_store.insert(EMB_B, Tensor::zeros(&[SOCIAL_DIM])).unwrap();
        let (zeroed, _) = fuser.forward(&zero_store, &map, &uniform_mask(K)).unwrap();
        assert!(zeroed.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_convolution_sees_a_lone_neighbor_only_in_its_receptive_columns() {
        // Stride-2 pad-1 3x3: input column 0 reaches output column 0 only,
        // input column 10 reaches output column 5 only.
        let fuser = ScnnFuser::new(K);
        let mut store = ParamStore::<f64>::new();
        fuser.register_params(&mut store, &mut rng(19)).unwrap();
        let enc = random_encodings(1, 20);
        let mask = uniform_mask(K);

        let at_left = build_social_map(&enc, 1, &[(5, 0)], &[true], K).unwrap();
        let at_right = build_social_map(&enc, 1, &[(5, 10)], &[true], K).unwrap();
        let (_, a) = fuser.forward(&store, &at_left, &mask).unwrap();
        let (_, b) = fuser.forward(&store, &at_right, &mask).unwrap();

        let mut touched = false;
        for y in 0..6 {
            for x in 0..6 {
                for ch in 0..C1_OUT {
                    let (va, vb) = (a.conv1_pre.at3(y, x, ch), b.conv1_pre.at3(y, x, ch));
                    if x == 0 || x == 5 {
                        touched |= va != vb;
                    } else {
                        assert_eq!(va, vb, "activation leaked to column {x}");
                    }
                }
            }
        }
        assert!(touched, "moving the neighbor changed nothing — degenerate test");
    }

    #[test]
    fn scnn_gradients_match_finite_differences() {
        let fuser = ScnnFuser::new(K);
        let mut store = ParamStore::<f64>::new();
        fuser.register_params(&mut store, &mut rng(21)).unwrap();
        // Push pre-activations away from the ReLU kink so the central
        // differences below never straddle it.
        let mut r_b = rng(210);
        for name in [C1_B, C2_B] {
            for v in store.get_mut(name).unwrap().data_mut() {
                *v = r_b.gen_range(0.05..0.3) * if r_b.gen::<bool>() { 1.0 } else { -1.0 };
            }
        }
        let map = random_map(22);
        let mask = {
            // A positive, non-uniform mask.
            let mut r = rng(23);
            let logits: Vec<f64> = (0..K * K).map(|_| r.gen_range(-1.0..1.0)).collect();
            Tensor::from_vec(&[K, K], softmax(&logits).unwrap()).unwrap()
        };
        let mut r = rng(24);
        let probe: Vec<f64> = (0..SOCIAL_DIM).map(|_| r.gen_range(-1.0..1.0)).collect();

        let (_, cache) = fuser.forward(&store, &map, &mask).unwrap();
        let (d_map, d_mask) = fuser.backward(&mut store, &probe, &cache).unwrap();

        let mut loss = |st: &ParamStore<f64>| -> f64 {
            let (social, _) = fuser.forward(st, &map, &mask).unwrap();
            social.iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
        };
        for name in [C1_K, C1_B, C2_K, C2_B, EMB_W, EMB_B] {
            let len = store.get(name).unwrap().len();
            let coords: Vec<usize> = (0..len).step_by((len / 24).max(1)).collect();
            let rep = check_param_sampled(&mut store, name, &coords, 1e-6, &mut loss).unwrap();
            assert!(rep.max_rel < 1e-5, "{name}: {}", rep.max_rel);
        }

        // Input gradients, sampled.
        let eval = |map: &Tensor<f64>, mask: &Tensor<f64>, st: &ParamStore<f64>| -> f64 {
            let (social, _) = fuser.forward(st, map, mask).unwrap();
            social.iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
        };
        let mut m = map.clone();
        let idxs: Vec<usize> = (0..m.len()).step_by(211).collect();
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for &i in &idxs {
            let orig = m.data()[i];
            m.data_mut()[i] = orig + 1e-5;
            let lp = eval(&m, &mask, &store);
            m.data_mut()[i] = orig - 1e-5;
            let lm = eval(&m, &mask, &store);
            m.data_mut()[i] = orig;
            fd.push((lp - lm) / 2e-5);
            an.push(d_map.data()[i]);
        }
        assert!(max_block_rel_error(&an, &fd, REL_FLOOR) < 1e-5, "d_map");

        let mut k = mask.clone();
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for i in (0..k.len()).step_by(13) {
            let orig = k.data()[i];
            k.data_mut()[i] = orig + 1e-7;
            let lp = eval(&map, &k, &store);
            k.data_mut()[i] = orig - 1e-7;
            let lm = eval(&map, &k, &store);
            k.data_mut()[i] = orig;
            fd.push((lp - lm) / 2e-7);
            an.push(d_mask.data()[i]);
        }
        assert!(max_block_rel_error(&an, &fd, REL_FLOOR) < 1e-4, "d_mask");
    }

    #[test]
    fn sum_pool_is_exactly_linear_in_the_mask() {
        let fuser = SpFuser::new(K);
        let mut store = ParamStore::<f64>::new();
        fuser.register_params(&mut store, &mut rng(25)).unwrap();
        let map = random_map(26);
        let mask = uniform_mask::<f64>(K);
        let mut doubled = mask.clone();
        doubled.scale(2.0);

        let (_, c1) = fuser.forward(&store, &map, &mask).unwrap();
        let (_, c2) = fuser.forward(&store, &map, &doubled).unwrap();
        // Scaling by a power of two is exact, so linearity holds bitwise.
        for d in 0..ENC_DIM {
            assert_eq!(c2.pooled[d], 2.0 * c1.pooled[d]);
        }
        // Zero mask pools to exactly zero.
        let (_, c0) = fuser.forward(&store, &map, &Tensor::zeros(&[K, K])).unwrap();
        assert!(c0.pooled.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_pool_gradients_match_finite_differences() {
        let fuser = SpFuser::new(K);
        let mut store = ParamStore::<f64>::new();
        fuser.register_params(&mut store, &mut rng(27)).unwrap();
        let map = random_map(28);
        let mut r = rng(29);
        let logits: Vec<f64> = (0..K * K).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mask = Tensor::from_vec(&[K, K], softmax(&logits).unwrap()).unwrap();
        let probe: Vec<f64> = (0..SOCIAL_DIM).map(|_| r.gen_range(-1.0..1.0)).collect();

        let (_, cache) = fuser.forward(&store, &map, &mask).unwrap();
        let (d_map, d_mask) = fuser.backward(&mut store, &probe, &cache).unwrap();

        let mut loss = |st: &ParamStore<f64>| -> f64 {
            let (social, _) = fuser.forward(st, &map, &mask).unwrap();
            social.iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
        };
        for name in [SP_W, SP_B] {
            let rep = check_param(&mut store, name, 1e-5, &mut loss).unwrap();
            assert!(rep.max_rel < 1e-6, "{name}: {}", rep.max_rel);
        }

        let eval = |map: &Tensor<f64>, mask: &Tensor<f64>| -> f64 {
            let (social, _) = fuser.forward(&store, map, mask).unwrap();
            social.iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
        };
        let mut m = map.clone();
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for i in (0..m.len()).step_by(157) {
            let orig = m.data()[i];
            m.data_mut()[i] = orig + 1e-5;
            let lp = eval(&m, &mask);
            m.data_mut()[i] = orig - 1e-5;
            let lm = eval(&m, &mask);
            m.data_mut()[i] = orig;
            fd.push((lp - lm) / 2e-5);
            an.push(d_map.data()[i]);
        }
        assert!(max_block_rel_error(&an, &fd, REL_FLOOR) < 1e-6, "d_map");

        let mut k = mask.clone();
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for i in (0..k.len()).step_by(11) {
            let orig = k.data()[i];
            k.data_mut()[i] = orig + 1e-6;
            let lp = eval(&map, &k);
            k.data_mut()[i] = orig - 1e-6;
            let lm = eval(&map, &k);
            k.data_mut()[i] = orig;
            fd.push((lp - lm) / 2e-6);
            an.push(d_mask.data()[i]);
        }
        assert!(max_block_rel_error(&an, &fd, REL_FLOOR) < 1e-6, "d_mask");
    }

    #[test]
    fn concat_fuser_keeps_the_nearest_neighbors_in_slot_order() {
        let fuser = ConFuser::new(CON_SLOTS);
        let mut store = ParamStore::<f64>::new();
        fuser.register_params(&mut store, &mut rng(30)).unwrap();

        // Ten valid neighbors; distances descending so slot order reverses
        // row order, with a tie between rows 8 and 9 resolved to row 8.
        let n = 10;
        let enc = random_encodings(n, 31);
        let valid = vec![true; n];
        let mut dist: Vec<f64> = (0..n).map(|j| 10.0 - j as f64).collect();
        dist[8] = 1.0;
        dist[9] = 1.0;
        let (_, cache, dropped) = fuser.forward(&store, &enc, n, &valid, &dist).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(cache.chosen, vec![8, 9, 7, 6, 5, 4, 3, 2]);

        // Two neighbors: remaining slots stay zero.
        let enc2 = random_encodings(2, 32);
        let (_, cache2, dropped2) = fuser
            .forward(&store, &enc2, 2, &[true, true], &[3.0, 1.0])
            .unwrap();
        assert_eq!(dropped2, 0);
        assert_eq!(cache2.chosen, vec![1, 0]);
        assert!(cache2.concat[2 * ENC_DIM..].iter().all(|&v| v == 0.0));

        // Invalid rows never occupy slots.
        let (_, cache3, _) = fuser
            .forward(&store, &enc2, 2, &[false, true], &[0.5, 1.0])
            .unwrap();
        assert_eq!(cache3.chosen, vec![1]);
    }

    #[test]
    fn concat_fuser_gradients_match_finite_differences() {
        let fuser = ConFuser::new(CON_SLOTS);
        let mut store = ParamStore::<f64>::new();
        fuser.register_params(&mut store, &mut rng(33)).unwrap();
        let n = 5;
        let enc = random_encodings(n, 34);
        let valid = [true, true, false, true, true];
        let dist = [4.0, 2.0, 1.0, 3.0, 5.0];
        let mut r = rng(35);
        let probe: Vec<f64> = (0..SOCIAL_DIM).map(|_| r.gen_range(-1.0..1.0)).collect();

        let (_, cache, _) = fuser.forward(&store, &enc, n, &valid, &dist).unwrap();
        let mut d_enc = vec![0.0; n * ENC_DIM];
        fuser.backward(&mut store, &probe, &cache, &mut d_enc).unwrap();

        let mut loss = |st: &ParamStore<f64>| -> f64 {
            let (social, _, _) = fuser.forward(st, &enc, n, &valid, &dist).unwrap();
            social.iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
        };
        for name in [CON_W, CON_B] {
            let len = store.get(name).unwrap().len();
            let coords: Vec<usize> = (0..len).step_by((len / 40).max(1)).collect();
            let rep = check_param_sampled(&mut store, name, &coords, 1e-5, &mut loss).unwrap();
            assert!(rep.max_rel < 1e-6, "{name}: {}", rep.max_rel);
        }

        let mut e = enc.clone();
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for i in (0..e.len()).step_by(7) {
            let orig = e[i];
            e[i] = orig + 1e-5;
            let (sp, _, _) = fuser.forward(&store, &e, n, &valid, &dist).unwrap();
            let lp: f64 = sp.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
            e[i] = orig - 1e-5;
            let (sm, _, _) = fuser.forward(&store, &e, n, &valid, &dist).unwrap();
            let lm: f64 = sm.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
            e[i] = orig;
            fd.push((lp - lm) / 2e-5);
            an.push(d_enc[i]);
        }
        assert!(max_block_rel_error(&an, &fd, REL_FLOOR) < 1e-6);
        // The invalid row's gradient stays zero.
        assert!(d_enc[2 * ENC_DIM..3 * ENC_DIM].iter().all(|&v| v == 0.0));
    }
}
