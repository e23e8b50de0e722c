//! Central-difference gradient oracle.
//!
//! Layers implement backward passes by hand, so every one of them is held
//! against this oracle: perturb one parameter component at a time by ±ε,
//! re-run the forward pass, and compare (L⁺ − L⁻) / 2ε with the analytic
//! gradient.
//!
//! Comparison metric: rel = |a − fd| / max(|a|, |fd|, floor). Components
//! larger than `floor` are compared relatively; smaller ones are held to the
//! absolute tolerance floor·tol, which sits well above the O(ε²) truncation
//! error of the central difference while still catching sign flips and
//! dropped terms.

use crate::error::Result;
use crate::num::{s, to_f64, Scalar};
use crate::params::ParamStore;

/// Default small-denominator floor for the relative-error metric.
pub const REL_FLOOR: f64 = 1e-3;

/// Relative error between an analytic gradient and its finite-difference
/// estimate, maximized over components.
pub fn max_rel_error(analytic: &[f64], fd: &[f64], floor: f64) -> f64 {
    debug_assert_eq!(analytic.len(), fd.len());
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Blockwise variant: every component's deviation is measured against the
/// largest gradient magnitude in the block. Used for composed-model checks
/// where individual components span many orders of magnitude.
pub fn max_block_rel_error(analytic: &[f64], fd: &[f64], floor: f64) -> f64 {
    debug_assert_eq!(analytic.len(), fd.len());
    let block_max = analytic
        .iter()
        .chain(fd.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(floor);
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(&a, &f)| (a - f).abs() / block_max)
        .fold(0.0, f64::max)
}

/// Central difference of `loss` w.r.t. one component of one parameter.
/// The parameter is restored to its exact original bits afterwards.
pub fn finite_diff_component<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    index: usize,
    eps: f64,
    loss: &mut impl FnMut(&ParamStore<S>) -> f64,
) -> Result<f64> {
    let original = store.get(name)?.data()[index];
    let eps_s: S = s(eps);

    store.get_mut(name)?.data_mut()[index] = original + eps_s;
    let plus = loss(store);
    store.get_mut(name)?.data_mut()[index] = original - eps_s;
    let minus = loss(store);
    store.get_mut(name)?.data_mut()[index] = original;

    // Use the actually-applied perturbation so the estimate stays unbiased
    // even when ε is absorbed by rounding in narrow scalar types.
    let applied = to_f64(original + eps_s) - to_f64(original - eps_s);
    Ok((plus - minus) / applied)
}

/// Central differences for every component of `name`.
pub fn finite_diff_param<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    eps: f64,
    loss: &mut impl FnMut(&ParamStore<S>) -> f64,
) -> Result<Vec<f64>> {
    let n = store.get(name)?.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(finite_diff_component(store, name, i, eps, loss)?);
    }
    Ok(out)
}

/// Result of checking one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel: f64,
    pub checked: usize,
}

/// Checks the analytic gradients currently stored for `name` against finite
/// differences over every component.
pub fn check_param<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    eps: f64,
    loss: &mut impl FnMut(&ParamStore<S>) -> f64,
) -> Result<ParamCheck> {
    let fd = finite_diff_param(store, name, eps, loss)?;
    let analytic: Vec<f64> = store.grad(name)?.data().iter().map(|&v| to_f64(v)).collect();
    Ok(ParamCheck {
        name: name.to_string(),
        max_rel: max_rel_error(&analytic, &fd, REL_FLOOR),
        checked: fd.len(),
    })
}

/// Checks a sampled subset of coordinates of `name` with the blockwise
/// metric; used for large composed-model parameter blocks where exhaustive
/// perturbation would be too slow.
pub fn check_param_sampled<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    coords: &[usize],
    eps: f64,
    loss: &mut impl FnMut(&ParamStore<S>) -> f64,
) -> Result<ParamCheck> {
    let mut fd = Vec::with_capacity(coords.len());
    let mut analytic = Vec::with_capacity(coords.len());
    for &i in coords {
        fd.push(finite_diff_component(store, name, i, eps, loss)?);
        analytic.push(to_f64(store.grad(name)?.data()[i]));
    }
    Ok(ParamCheck {
        name: name.to_string(),
        max_rel: max_block_rel_error(&analytic, &fd, REL_FLOOR),
        checked: coords.len(),
    })
}
