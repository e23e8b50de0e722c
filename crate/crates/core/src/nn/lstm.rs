//! Single LSTM cell with hand-derived backward.
//!
//! Gate layout along the 4H axis is [input, forget, cell-candidate, output].
//! One bias vector is applied to the summed pre-activation:
//!   pre = W_ih x + W_hh h + b
//!   c'  = f * c + i * g
//!   h'  = o * tanh(c')

use crate::error::{CoreError, Result};
use crate::num::Scalar;
use crate::tensor::Tensor;

use super::activation::{sigmoid, sigmoid_deriv_from_y, tanh_deriv_from_y};

/// Borrowed views of one cell's weights.
#[derive(Clone, Copy)]
pub struct LstmWeights<'a, S> {
    /// (4H, I)
    pub w_ih: &'a Tensor<S>,
    /// (4H, H)
    pub w_hh: &'a Tensor<S>,
    /// (4H)
    pub bias: &'a Tensor<S>,
}

impl<'a, S: Scalar> LstmWeights<'a, S> {
    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[1]
    }

    fn validate(&self, x: &[S], h: &[S], c: &[S]) -> Result<()> {
        let hd = self.hidden_dim();
        let id = self.input_dim();
        let ok = self.w_ih.rank() == 2
            && self.w_hh.rank() == 2
            && self.w_ih.shape()[0] == 4 * hd
            && self.w_hh.shape()[0] == 4 * hd
            && self.bias.shape() == [4 * hd]
            && x.len() == id
            && h.len() == hd
            && c.len() == hd;
        if !ok {
            return Err(CoreError::Shape {
                op: "lstm_cell",
                detail: format!(
                    "w_ih {:?}, w_hh {:?}, b {:?}, x {}, h {}, c {}",
                    self.w_ih.shape(),
                    self.w_hh.shape(),
                    self.bias.shape(),
                    x.len(),
                    h.len(),
                    c.len()
                ),
            });
        }
        Ok(())
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStepCache<S> {
    pub x: Vec<S>,
    pub h_prev: Vec<S>,
    pub c_prev: Vec<S>,
    pub i: Vec<S>,
    pub f: Vec<S>,
    pub g: Vec<S>,
    pub o: Vec<S>,
    pub c_new: Vec<S>,
}

/// Gradients produced by one backward step.
pub struct LstmStepGrads<S> {
    pub dw_ih: Tensor<S>,
    pub dw_hh: Tensor<S>,
    pub db: Tensor<S>,
    pub dx: Vec<S>,
    pub dh_prev: Vec<S>,
    pub dc_prev: Vec<S>,
}

fn gates<S: Scalar>(x: &[S], h: &[S], w: &LstmWeights<S>) -> (Vec<S>, Vec<S>, Vec<S>, Vec<S>) {
    let hd = w.hidden_dim();
    let id = w.input_dim();
    let wih = w.w_ih.data();
    let whh = w.w_hh.data();
    let b = w.bias.data();

    let mut pre = vec![S::zero(); 4 * hd];
    for (r, p) in pre.iter_mut().enumerate() {
        let mut acc = b[r];
        let row_i = &wih[r * id..(r + 1) * id];
        for (wv, xv) in row_i.iter().zip(x.iter()) {
            acc += *wv * *xv;
        }
        let row_h = &whh[r * hd..(r + 1) * hd];
        for (wv, hv) in row_h.iter().zip(h.iter()) {
            acc += *wv * *hv;
        }
        *p = acc;
    }
    let i: Vec<S> = pre[0..hd].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<S> = pre[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<S> = pre[2 * hd..3 * hd].iter().map(|&v| v.tanh()).collect();
    let o: Vec<S> = pre[3 * hd..4 * hd].iter().map(|&v| sigmoid(v)).collect();
    (i, f, g, o)
}

/// One cell step without caching; the inference-facing entry point.
pub fn lstm_cell_step<S: Scalar>(
    x: &[S],
    h: &[S],
    c: &[S],
    w: &LstmWeights<S>,
) -> Result<(Vec<S>, Vec<S>)> {
    w.validate(x, h, c)?;
    let (h_new, c_new, _) = step_inner(x, h, c, w);
    Ok((h_new, c_new))
}

/// One cell step that also returns the cache needed for backward.
pub fn lstm_cell_forward<S: Scalar>(
    x: &[S],
    h: &[S],
    c: &[S],
    w: &LstmWeights<S>,
) -> Result<(Vec<S>, Vec<S>, LstmStepCache<S>)> {
    w.validate(x, h, c)?;
    let (h_new, c_new, cache) = step_inner(x, h, c, w);
    Ok((h_new, c_new, cache))
}

fn step_inner<S: Scalar>(
    x: &[S],
    h: &[S],
    c: &[S],
    w: &LstmWeights<S>,
) -> (Vec<S>, Vec<S>, LstmStepCache<S>) {
    let hd = w.hidden_dim();
    let (i, f, g, o) = gates(x, h, w);
    let mut c_new = vec![S::zero(); hd];
    let mut h_new = vec![S::zero(); hd];
    for j in 0..hd {
        c_new[j] = f[j] * c[j] + i[j] * g[j];
        h_new[j] = o[j] * c_new[j].tanh();
    }
    let cache = LstmStepCache {
        x: x.to_vec(),
        h_prev: h.to_vec(),
        c_prev: c.to_vec(),
        i,
        f,
        g,
        o,
        c_new: c_new.clone(),
    };
    (h_new, c_new, cache)
}

/// Backward through one step. `dh_next` / `dc_next` are the gradients flowing
/// into this step's outputs h' and c'.
pub fn lstm_cell_backward<S: Scalar>(
    dh_next: &[S],
    dc_next: &[S],
    w: &LstmWeights<S>,
    cache: &LstmStepCache<S>,
) -> LstmStepGrads<S> {
    let hd = w.hidden_dim();
    let id = w.input_dim();
    debug_assert_eq!(dh_next.len(), hd);
    debug_assert_eq!(dc_next.len(), hd);

    // Pre-activation gradients, gate by gate.
    let mut dpre = vec![S::zero(); 4 * hd];
    let mut dc_prev = vec![S::zero(); hd];
    for j in 0..hd {
        let tanh_c = cache.c_new[j].tanh();
        // h' = o * tanh(c'); total gradient into c' combines the h path and
        // the direct dc_next path.
        let dc = dh_next[j] * cache.o[j] * tanh_deriv_from_y(tanh_c) + dc_next[j];
        let do_ = dh_next[j] * tanh_c;
        let di = dc * cache.g[j];
        let df = dc * cache.c_prev[j];
        let dg = dc * cache.i[j];
        dc_prev[j] = dc * cache.f[j];
        dpre[j] = di * sigmoid_deriv_from_y(cache.i[j]);
        dpre[hd + j] = df * sigmoid_deriv_from_y(cache.f[j]);
        dpre[2 * hd + j] = dg * tanh_deriv_from_y(cache.g[j]);
        dpre[3 * hd + j] = do_ * sigmoid_deriv_from_y(cache.o[j]);
    }

    // pre = W_ih x + W_hh h + b.
    let mut dw_ih = Tensor::zeros(w.w_ih.shape());
    let mut dw_hh = Tensor::zeros(w.w_hh.shape());
    let mut dx = vec![S::zero(); id];
    let mut dh_prev = vec![S::zero(); hd];
    {
        let dwi = dw_ih.data_mut();
        let wih = w.w_ih.data();
        for (r, &dp) in dpre.iter().enumerate() {
            let row = &mut dwi[r * id..(r + 1) * id];
            let wrow = &wih[r * id..(r + 1) * id];
            for k in 0..id {
                row[k] = dp * cache.x[k];
                dx[k] += wrow[k] * dp;
            }
        }
    }
    {
        let dwh = dw_hh.data_mut();
        let whh = w.w_hh.data();
        for (r, &dp) in dpre.iter().enumerate() {
            let row = &mut dwh[r * hd..(r + 1) * hd];
            let wrow = &whh[r * hd..(r + 1) * hd];
            for k in 0..hd {
                row[k] = dp * cache.h_prev[k];
                dh_prev[k] += wrow[k] * dp;
            }
        }
    }
    let db = Tensor::from_vec(&[4 * hd], dpre).expect("db shape");
    LstmStepGrads {
        dw_ih,
        dw_hh,
        db,
        dx,
        dh_prev,
        dc_prev,
    }
}
