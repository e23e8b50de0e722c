//! Training losses, averaged over the forecast horizon.
//!
//! * [`l2_loss`] — mean squared Euclidean displacement between predicted and
//!   true positions.
//! * [`gaussian_nll`] — negative log-likelihood of the true (x, y) under the
//!   predicted bivariate Gaussian, plus a weighted squared error on z.

use crate::decoder::GaussStep;
use crate::error::{CoreError, Result};
use crate::num::{s, to_f64, Scalar};

fn check_lengths(pred: usize, gt: usize, op: &'static str) -> Result<()> {
    if pred == 0 || pred != gt {
        return Err(CoreError::Shape {
            op,
            detail: format!("{pred} predicted steps vs {gt} ground-truth steps"),
        });
    }
    Ok(())
}

/// Mean over steps of the squared displacement ‖p − g‖².
pub fn l2_loss<S: Scalar>(pred: &[[S; 3]], gt: &[[S; 3]]) -> Result<S> {
    check_lengths(pred.len(), gt.len(), "l2_loss")?;
    let mut total = S::zero();
    for (p, g) in pred.iter().zip(gt.iter()) {
        for j in 0..3 {
            let d = p[j] - g[j];
            total += d * d;
        }
    }
    let loss = total / s(pred.len() as f64);
    if !loss.is_finite() {
        return Err(CoreError::NonFinite("l2_loss".to_string()));
    }
    Ok(loss)
}

/// Gradient of [`l2_loss`] w.r.t. the predicted positions.
pub fn l2_loss_backward<S: Scalar>(pred: &[[S; 3]], gt: &[[S; 3]]) -> Vec<[S; 3]> {
    debug_assert_eq!(pred.len(), gt.len());
    let inv_t: S = s(1.0 / pred.len() as f64);
    let two: S = s(2.0);
    pred.iter()
        .zip(gt.iter())
        .map(|(p, g)| {
            [
                two * (p[0] - g[0]) * inv_t,
                two * (p[1] - g[1]) * inv_t,
                two * (p[2] - g[2]) * inv_t,
            ]
        })
        .collect()
}

/// Mean over steps of
/// ln(2π σx σy √(1−ρ²)) + q / (2(1−ρ²)) + λz (gz − ẑ)²,
/// where q is the standard bivariate quadratic form in the (x, y) residual.
pub fn gaussian_nll<S: Scalar>(steps: &[GaussStep<S>], gt: &[[S; 3]], lambda_z: f64) -> Result<S> {
    check_lengths(steps.len(), gt.len(), "gaussian_nll")?;
    let lz: S = s(lambda_z);
    let two_pi: S = s(std::f64::consts::TAU);
    let half: S = s(0.5);
    let two: S = s(2.0);
    let mut total = S::zero();
    for (i, (st, g)) in steps.iter().zip(gt.iter()).enumerate() {
        let (sx, sy, rho) = (st.sigma[0], st.sigma[1], st.rho);
        let ex = g[0] - st.mu[0];
        let ey = g[1] - st.mu[1];
        let o = S::one() - rho * rho;
        if !(to_f64(o) > 0.0 && to_f64(sx) > 0.0 && to_f64(sy) > 0.0) {
            return Err(CoreError::NonFinite(format!(
                "gaussian_nll: degenerate covariance at step {i}"
            )));
        }
        let q = (ex / sx) * (ex / sx) - two * rho * ex * ey / (sx * sy) + (ey / sy) * (ey / sy);
        let dz = g[2] - st.z;
        let term = (two_pi * sx * sy).ln() + half * o.ln() + q / (two * o) + lz * dz * dz;
        if !term.is_finite() {
            return Err(CoreError::NonFinite(format!(
                "gaussian_nll: non-finite term at step {i}"
            )));
        }
        total += term;
    }
    Ok(total / s(steps.len() as f64))
}

/// Gradient of [`gaussian_nll`] w.r.t. each step's transformed outputs,
/// rows of (dμx, dμy, dσx, dσy, dρ, dẑ).
pub fn gaussian_nll_backward<S: Scalar>(
    steps: &[GaussStep<S>],
    gt: &[[S; 3]],
    lambda_z: f64,
) -> Vec<Vec<S>> {
    debug_assert_eq!(steps.len(), gt.len());
    let inv_t: S = s(1.0 / steps.len() as f64);
    let lz: S = s(lambda_z);
    let two: S = s(2.0);
    steps
        .iter()
        .zip(gt.iter())
        .map(|(st, g)| {
            let (sx, sy, rho) = (st.sigma[0], st.sigma[1], st.rho);
            let ex = g[0] - st.mu[0];
            let ey = g[1] - st.mu[1];
            let o = S::one() - rho * rho;
            let cross = rho * ex * ey / (sx * sy);
            let q = (ex / sx) * (ex / sx) - two * cross + (ey / sy) * (ey / sy);

            let d_mu_x = -(ex / (sx * sx) - rho * ey / (sx * sy)) / o;
            let d_mu_y = -(ey / (sy * sy) - rho * ex / (sx * sy)) / o;
            let d_sx = (S::one() - ((ex / sx) * (ex / sx) - cross) / o) / sx;
            let d_sy = (S::one() - ((ey / sy) * (ey / sy) - cross) / o) / sy;
            let d_rho = -rho / o - ex * ey / (sx * sy * o) + q * rho / (o * o);
            let d_z = -two * lz * (g[2] - st.z);
            vec![
                d_mu_x * inv_t,
                d_mu_y * inv_t,
                d_sx * inv_t,
                d_sy * inv_t,
                d_rho * inv_t,
                d_z * inv_t,
            ]
        })
        .collect()
}
