//! Named parameter storage.
//!
//! All trainable tensors live in one `ParamStore`, keyed by dotted path
//! (`"encoder.lstm.w_ih"`). Keys iterate in lexicographic order, which makes
//! optimizer updates, checkpoint layout, and gradient checks deterministic.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::num::{s, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    values: BTreeMap<String, Tensor<S>>,
    grads: BTreeMap<String, Tensor<S>>,
    /// True once a backward pass has populated `grads` since the last
    /// `zero_grads`; guards the optimizer against stepping on stale zeros.
    grads_live: bool,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            values: BTreeMap::new(),
            grads: BTreeMap::new(),
            grads_live: false,
        }
    }

    /// Registers a parameter with an explicit initial value.
    /// The gradient buffer is created zeroed with the same shape.
    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        if self.values.contains_key(name) {
            return Err(CoreError::Invalid(format!("parameter `{name}` registered twice")));
        }
        self.grads.insert(name.to_string(), Tensor::zeros(value.shape()));
        self.values.insert(name.to_string(), value);
        Ok(())
    }

    /// Registers a parameter drawn i.i.d. from U(-bound, bound).
    ///
    /// Values are drawn in f64 and narrowed, so an f32 store and an f64 store
    /// built from the same RNG state hold the same numbers up to rounding.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n).map(|_| s(rng.gen_range(-bound..bound))).collect();
        self.insert(name, Tensor::from_vec(shape, data)?)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.values
            .get(name)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.values
            .get_mut(name)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    /// Borrow a parameter for a hot path; panics with the parameter name if
    /// it is unregistered (a programming error, not a runtime condition).
    #[inline]
    pub fn param(&self, name: &str) -> &Tensor<S> {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not registered"))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<S>> {
        self.grads
            .get(name)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    /// Adds `delta` into the gradient buffer of `name` and marks gradients
    /// as populated.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor<S>) -> Result<()> {
        let g = self
            .grads
            .get_mut(name)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))?;
        g.add_scaled(delta, S::one())?;
        self.grads_live = true;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.fill(S::zero());
        }
        self.grads_live = false;
    }

    /// Multiplies every gradient by `factor` (e.g. 1/batch for a mean loss).
    pub fn scale_grads(&mut self, factor: S) {
        for g in self.grads.values_mut() {
            g.scale(factor);
        }
    }

    pub fn grads_populated(&self) -> bool {
        self.grads_live
    }

    /// Marks gradients as consumed (the optimizer calls this after a step so
    /// a second step cannot silently reuse stale gradients).
    pub fn mark_grads_consumed(&mut self) {
        self.grads_live = false;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.values.values().map(|t| t.len()).sum()
    }

    /// Parameter names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Applies an in-place update to every (value, grad) pair in name order.
    pub fn for_each_pair_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<S>, &Tensor<S>)) {
        for (name, value) in self.values.iter_mut() {
            let grad = &self.grads[name];
            f(name, value, grad);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.values().all(|t| t.all_finite())
    }
}
