//! 2-D convolution (cross-correlation) and max pooling over HWC tensors.
//!
//! Input (H, W, Cin), kernel (KH, KW, Cin, Cout), zero padding, output
//! (H', W', Cout) with H' = floor((H + 2p - KH) / s) + 1. Channels are the
//! innermost axis so the inner loops run over contiguous memory.

use crate::error::{CoreError, Result};
use crate::num::Scalar;
use crate::tensor::Tensor;

fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn validate_conv<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if input.rank() != 3 || kernel.rank() != 4 {
        return Err(CoreError::Shape {
            op: "conv2d",
            detail: format!(
                "input must be rank 3 and kernel rank 4, got {:?} / {:?}",
                input.shape(),
                kernel.shape()
            ),
        });
    }
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, kcin, cout) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kcin != cin {
        return Err(CoreError::Shape {
            op: "conv2d",
            detail: format!("input has {cin} channels but kernel expects {kcin}"),
        });
    }
    if bias.shape() != [cout] {
        return Err(CoreError::Shape {
            op: "conv2d",
            detail: format!("bias {:?} vs {cout} output channels", bias.shape()),
        });
    }
    let oh = out_extent(h, kh, stride, padding);
    let ow = out_extent(w, kw, stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(CoreError::Shape {
            op: "conv2d",
            detail: format!(
                "window {kh}x{kw} stride {stride} padding {padding} does not fit input {h}x{w}"
            ),
        }),
    }
}

pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let (oh, ow) = validate_conv(input, kernel, bias, stride, padding)?;
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, _, cout) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let ind = input.data();
    let kd = kernel.data();
    let bd = bias.data();

    let mut out = Tensor::zeros(&[oh, ow, cout]);
    let od = out.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            let out_base = (oy * ow + ox) * cout;
            od[out_base..out_base + cout].copy_from_slice(bd);
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_base = ((iy as usize) * w + ix as usize) * cin;
                    let k_base = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = ind[in_base + ci];
                        let krow = &kd[k_base + ci * cout..k_base + (ci + 1) * cout];
                        let orow = &mut od[out_base..out_base + cout];
                        for (o, k) in orow.iter_mut().zip(krow.iter()) {
                            *o += xv * *k;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<S> {
    pub dkernel: Tensor<S>,
    pub dbias: Tensor<S>,
    pub dinput: Tensor<S>,
}

/// Backward through `conv2d`. `dout` must have the forward output shape.
pub fn conv2d_backward<S: Scalar>(
    dout: &Tensor<S>,
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> ConvGrads<S> {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, _, cout) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let (oh, ow) = (dout.shape()[0], dout.shape()[1]);
    debug_assert_eq!(dout.shape()[2], cout);

    let ind = input.data();
    let kd = kernel.data();
    let dd = dout.data();

    let mut dkernel = Tensor::zeros(kernel.shape());
    let mut dbias = Tensor::zeros(&[cout]);
    let mut dinput = Tensor::zeros(input.shape());
    let dkd = dkernel.data_mut();
    let dbd = dbias.data_mut();
    let did = dinput.data_mut();

    for oy in 0..oh {
        for ox in 0..ow {
            let out_base = (oy * ow + ox) * cout;
            let drow = &dd[out_base..out_base + cout];
            for (co, &dv) in drow.iter().enumerate() {
                dbd[co] += dv;
            }
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_base = ((iy as usize) * w + ix as usize) * cin;
                    let k_base = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = ind[in_base + ci];
                        let krow = &kd[k_base + ci * cout..k_base + (ci + 1) * cout];
                        let dkrow = &mut dkd[k_base + ci * cout..k_base + (ci + 1) * cout];
                        let mut dx = S::zero();
                        for co in 0..cout {
                            let dv = drow[co];
                            dkrow[co] += dv * xv;
                            dx += krow[co] * dv;
                        }
                        did[in_base + ci] += dx;
                    }
                }
            }
        }
    }
    ConvGrads {
        dkernel,
        dbias,
        dinput,
    }
}

/// Argmax positions recorded by the pooling forward pass.
pub struct PoolCache {
    pub argmax: Vec<usize>,
    pub input_shape: Vec<usize>,
}

pub fn maxpool2d<S: Scalar>(input: &Tensor<S>, kernel: usize, stride: usize) -> Result<Tensor<S>> {
    maxpool2d_forward(input, kernel, stride).map(|(out, _)| out)
}

/// Max pooling with no padding; ties resolve to the first element in
/// row-major scan order, which keeps backward deterministic.
pub fn maxpool2d_forward<S: Scalar>(
    input: &Tensor<S>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<S>, PoolCache)> {
    if input.rank() != 3 {
        return Err(CoreError::Shape {
            op: "maxpool2d",
            detail: format!("input must be rank 3, got {:?}", input.shape()),
        });
    }
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oh = out_extent(h, kernel, stride, 0);
    let ow = out_extent(w, kernel, stride, 0);
    let (oh, ow) = match (oh, ow) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(CoreError::Shape {
                op: "maxpool2d",
                detail: format!("window {kernel} stride {stride} does not fit input {h}x{w}"),
            })
        }
    };
    let ind = input.data();
    let mut out = Tensor::zeros(&[oh, ow, c]);
    let od = out.data_mut();
    let mut argmax = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = S::neg_infinity();
                let mut best_idx = 0usize;
                for ky in 0..kernel {
                    let iy = oy * stride + ky;
                    for kx in 0..kernel {
                        let ix = ox * stride + kx;
                        let idx = (iy * w + ix) * c + ch;
                        if ind[idx] > best {
                            best = ind[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o_idx = (oy * ow + ox) * c + ch;
                od[o_idx] = best;
                argmax[o_idx] = best_idx;
            }
        }
    }
    Ok((
        out,
        PoolCache {
            argmax,
            input_shape: input.shape().to_vec(),
        },
    ))
}

/// Routes each upstream gradient to the input element that won its window.
pub fn maxpool2d_backward<S: Scalar>(dout: &Tensor<S>, cache: &PoolCache) -> Tensor<S> {
    debug_assert_eq!(dout.len(), cache.argmax.len());
    let mut dinput = Tensor::zeros(&cache.input_shape);
    let did = dinput.data_mut();
    for (&src, &dv) in cache.argmax.iter().zip(dout.data().iter()) {
        did[src] += dv;
    }
    dinput
}
