//! Backward passes matching the forward ops in [`super::ops`] and
//! [`super::conv`]. Each takes whatever the forward pass can cheaply
//! recompute or cached, plus the upstream gradient, and returns gradients
//! with the same shapes as the values they differentiate.

use super::ops::{batch_channel_stats, mul, pixel_shuffle, pixel_unshuffle, reduce_to_shape};
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub struct LinearGrads<T> {
    pub dinput: Tensor<T>,
    pub dweight: Tensor<T>,
    pub dbias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let [n, d_in, _, _] = input.shape();
    let [d_out, _, _, _] = weight.shape();
    if dout.shape() != [n, d_out, 1, 1] {
        return Err(Error::shape(
            "linear_backward",
            format!("dout must be [{n}, {d_out}, 1, 1], got {:?}", dout.shape()),
        ));
    }
    let mut din = vec![0.0f64; n * d_in];
    let mut dw = vec![0.0f64; d_out * d_in];
    let mut db = vec![0.0f64; d_out];
    for s in 0..n {
        let x = &input.data()[s * d_in..(s + 1) * d_in];
        let g = &dout.data()[s * d_out..(s + 1) * d_out];
        for o in 0..d_out {
            let gv = g[o].to_f64s();
            db[o] += gv;
            let row = &weight.data()[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                din[s * d_in + i] += gv * row[i].to_f64s();
                dw[o * d_in + i] += gv * x[i].to_f64s();
            }
        }
    }
    Ok(LinearGrads {
        dinput: Tensor::from_vec([n, d_in, 1, 1], din.into_iter().map(T::from_f64).collect())?,
        dweight: Tensor::from_vec(weight.shape(), dw.into_iter().map(T::from_f64).collect())?,
        dbias: Tensor::from_vec([1, d_out, 1, 1], db.into_iter().map(T::from_f64).collect())?,
    })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, dout: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != dout.shape() {
        return Err(Error::shape("relu_backward", "shape mismatch"));
    }
    let mut out = Tensor::zeros(input.shape());
    for ((o, &x), &g) in out.data_mut().iter_mut().zip(input.data()).zip(dout.data()) {
        *o = if x > T::ZERO { g } else { T::ZERO };
    }
    Ok(out)
}

pub fn leaky_relu_backward<T: Scalar>(
    input: &Tensor<T>,
    slope: f64,
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    if input.shape() != dout.shape() {
        return Err(Error::shape("leaky_relu_backward", "shape mismatch"));
    }
    let s = T::from_f64(slope);
    let mut out = Tensor::zeros(input.shape());
    for ((o, &x), &g) in out.data_mut().iter_mut().zip(input.data()).zip(dout.data()) {
        *o = if x > T::ZERO { g } else { s * g };
    }
    Ok(out)
}

pub struct NormGrads<T> {
    pub dinput: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

/// Backward of instance norm; statistics are recomputed from `input`.
pub fn instance_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
    dout: &Tensor<T>,
) -> Result<NormGrads<T>> {
    let [n, c, h, w] = input.shape();
    if dout.shape() != input.shape() {
        return Err(Error::shape("instance_norm_backward", "shape mismatch"));
    }
    let m = (h * w) as f64;
    let mut dinput = Tensor::zeros(input.shape());
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for s in 0..n {
        for ch in 0..c {
            let x = input.plane(s, ch);
            let g = dout.plane(s, ch);
            let mean = x.iter().fold(0.0, |a, v| a + v.to_f64s()) / m;
            let var = x.iter().fold(0.0, |a, v| {
                let d = v.to_f64s() - mean;
                a + d * d
            }) / m;
            let inv = 1.0 / (var + eps).sqrt();
            let gam = gamma.data()[ch].to_f64s();

            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for i in 0..x.len() {
                let xhat = (x[i].to_f64s() - mean) * inv;
                let gv = g[i].to_f64s();
                sum_g += gv;
                sum_gx += gv * xhat;
            }
            dbeta[ch] += sum_g;
            dgamma[ch] += sum_gx;
            let mean_g = sum_g / m;
            let mean_gx = sum_gx / m;
            let dst = dinput.plane_mut(s, ch);
            for i in 0..x.len() {
                let xhat = (x[i].to_f64s() - mean) * inv;
                let dv = gam * inv * (g[i].to_f64s() - mean_g - xhat * mean_gx);
                dst[i] = T::from_f64(dv);
            }
        }
    }
    Ok(NormGrads {
        dinput,
        dgamma: Tensor::from_vec([1, c, 1, 1], dgamma.into_iter().map(T::from_f64).collect())?,
        dbeta: Tensor::from_vec([1, c, 1, 1], dbeta.into_iter().map(T::from_f64).collect())?,
    })
}

/// Backward of batch norm in train mode (batch statistics).
pub fn batch_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
    dout: &Tensor<T>,
) -> Result<NormGrads<T>> {
    let [n, c, h, w] = input.shape();
    if dout.shape() != input.shape() {
        return Err(Error::shape("batch_norm_backward", "shape mismatch"));
    }
    let m = (n * h * w) as f64;
    let (means, vars) = batch_channel_stats(input);
    let mut dinput = Tensor::zeros(input.shape());
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for ch in 0..c {
        let inv = 1.0 / (vars[ch] + eps).sqrt();
        let gam = gamma.data()[ch].to_f64s();
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for s in 0..n {
            let x = input.plane(s, ch);
            let g = dout.plane(s, ch);
            for i in 0..x.len() {
                let xhat = (x[i].to_f64s() - means[ch]) * inv;
                sum_g += g[i].to_f64s();
                sum_gx += g[i].to_f64s() * xhat;
            }
        }
        dbeta[ch] = sum_g;
        dgamma[ch] = sum_gx;
        let mean_g = sum_g / m;
        let mean_gx = sum_gx / m;
        for s in 0..n {
            let x = input.plane(s, ch).to_vec();
            let g = dout.plane(s, ch).to_vec();
            let dst = dinput.plane_mut(s, ch);
            for i in 0..x.len() {
                let xhat = (x[i].to_f64s() - means[ch]) * inv;
                dst[i] = T::from_f64(gam * inv * (g[i].to_f64s() - mean_g - xhat * mean_gx));
            }
        }
    }
    Ok(NormGrads {
        dinput,
        dgamma: Tensor::from_vec([1, c, 1, 1], dgamma.into_iter().map(T::from_f64).collect())?,
        dbeta: Tensor::from_vec([1, c, 1, 1], dbeta.into_iter().map(T::from_f64).collect())?,
    })
}

/// Backward of batch norm in eval mode: a fixed per-channel affine map.
pub fn batch_norm_eval_backward<T: Scalar>(
    gamma: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [_, c, _, _] = dout.shape();
    if gamma.shape() != [1, c, 1, 1] || running_var.shape() != [1, c, 1, 1] {
        return Err(Error::shape("batch_norm_eval_backward", "affine shape"));
    }
    let mut scale = Tensor::zeros([1, c, 1, 1]);
    for ch in 0..c {
        let inv = 1.0 / (running_var.data()[ch].to_f64s() + eps).sqrt();
        scale.data_mut()[ch] = T::from_f64(gamma.data()[ch].to_f64s() * inv);
    }
    mul(dout, &scale)
}

pub fn avg_pool_backward<T: Scalar>(
    input_shape: Shape,
    k: usize,
    stride: usize,
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    let [dn, dc, oh, ow] = dout.shape();
    if dn != n || dc != c || oh != (h - k) / stride + 1 || ow != (w - k) / stride + 1 {
        return Err(Error::shape("avg_pool_backward", "dout shape mismatch"));
    }
    let scale = 1.0 / (k * k) as f64;
    let mut din = Tensor::zeros(input_shape);
    for s in 0..n {
        for ch in 0..c {
            let g = dout.plane(s, ch);
            let mut acc = vec![0.0f64; h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = g[oy * ow + ox].to_f64s() * scale;
                    for ky in 0..k {
                        let row = (oy * stride + ky) * w + ox * stride;
                        for kx in 0..k {
                            acc[row + kx] += gv;
                        }
                    }
                }
            }
            let dst = din.plane_mut(s, ch);
            for (d, v) in dst.iter_mut().zip(acc) {
                *d = T::from_f64(v);
            }
        }
    }
    Ok(din)
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: Shape,
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    if dout.shape() != [n, c, 1, 1] {
        return Err(Error::shape(
            "global_avg_pool_backward",
            format!("dout must be [{n}, {c}, 1, 1], got {:?}", dout.shape()),
        ));
    }
    let m = 1.0 / (h * w) as f64;
    let mut din = Tensor::zeros(input_shape);
    for s in 0..n {
        for ch in 0..c {
            let gv = T::from_f64(dout.data()[s * c + ch].to_f64s() * m);
            din.plane_mut(s, ch).fill(gv);
        }
    }
    Ok(din)
}

/// Backward through dropout / drop_block given the forward multiplier.
pub fn mask_backward<T: Scalar>(mult: &Tensor<T>, dout: &Tensor<T>) -> Result<Tensor<T>> {
    mul(dout, mult)
}

pub fn pixel_shuffle_backward<T: Scalar>(r: usize, dout: &Tensor<T>) -> Result<Tensor<T>> {
    pixel_unshuffle(dout, r)
}

pub fn pixel_unshuffle_backward<T: Scalar>(r: usize, dout: &Tensor<T>) -> Result<Tensor<T>> {
    pixel_shuffle(dout, r)
}

pub fn concat_channels_backward<T: Scalar>(
    dout: &Tensor<T>,
    c_a: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    super::ops::split_channels(dout, c_a)
}

/// Gradients of `add(a, b)` under broadcasting.
pub fn add_backward<T: Scalar>(
    a_shape: Shape,
    b_shape: Shape,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((
        reduce_to_shape(dout, a_shape)?,
        reduce_to_shape(dout, b_shape)?,
    ))
}

/// Gradients of `mul(a, b)` under broadcasting.
pub fn mul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let da = reduce_to_shape(&mul(dout, b)?, a.shape())?;
    let db = reduce_to_shape(&mul(dout, a)?, b.shape())?;
    Ok((da, db))
}
