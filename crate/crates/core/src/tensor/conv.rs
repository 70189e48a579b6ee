//! 2D convolution, forward and backward.
//!
//! The fast path lowers each sample to an im2col matrix and runs an
//! axpy-based matrix product. All accumulation happens in f64 regardless of
//! the storage scalar so results are insensitive to summation order at f32
//! precision. `conv2d_naive` is the direct seven-loop definition used as a
//! reference in tests; it accumulates in f64 too, so the two differ only by
//! f64 rounding.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn validate<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<(usize, usize, usize, usize)> {
    let [_, ci, h, w] = input.shape();
    let [co, wci, kh, kw] = weight.shape();
    if kh != kw {
        return Err(Error::arg(op, format!("kernel must be square, got {kh}x{kw}")));
    }
    if wci != ci {
        return Err(Error::shape(
            op,
            format!("weight expects {wci} input channels, input has {ci}"),
        ));
    }
    if stride == 0 {
        return Err(Error::arg(op, "stride must be >= 1"));
    }
    if let Some(b) = bias {
        if b.shape() != [1, co, 1, 1] {
            return Err(Error::shape(
                op,
                format!("bias must be [1, {co}, 1, 1], got {:?}", b.shape()),
            ));
        }
    }
    Ok((co, kh, h, w))
}

/// Column index layout: row `(c*k + ky)*k + kx`, column `oy*ow + ox`.
fn im2col<T: Scalar>(
    input: &Tensor<T>,
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let [_, ci, h, w] = input.shape();
    let ohw = oh * ow;
    for c in 0..ci {
        let plane = input.plane(n, c);
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * ohw;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn is_identity_lowering(k: usize, stride: usize, pad: usize) -> bool {
    k == 1 && stride == 1 && pad == 0
}

/// `input` `[n, ci, h, w]`, `weight` `[co, ci, k, k]`, optional `bias`
/// `[1, co, 1, 1]`; zero padding of `pad` on every side.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (co, k, h, w) = validate("conv2d", input, weight, bias, stride)?;
    let [n, ci, _, _] = input.shape();
    let (oh, ow) = match (out_dim(h, k, stride, pad), out_dim(w, k, stride, pad)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} exceeds padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ))
        }
    };
    let ohw = oh * ow;
    let kk = ci * k * k;

    let mut out = Tensor::zeros([n, co, oh, ow]);
    let mut cols_buf = if is_identity_lowering(k, stride, pad) {
        Vec::new()
    } else {
        vec![T::ZERO; kk * ohw]
    };
    let mut acc = vec![0.0f64; co * ohw];
    let wdata = weight.data();

    for s in 0..n {
        let cols: &[T] = if is_identity_lowering(k, stride, pad) {
            let chw = ci * h * w;
            &input.data()[s * chw..(s + 1) * chw]
        } else {
            im2col(input, s, k, stride, pad, oh, ow, &mut cols_buf);
            &cols_buf
        };

        acc.fill(0.0);
        // Four output channels share each pass over a column row.
        let mut c0 = 0;
        while c0 < co {
            let cb = (co - c0).min(4);
            for r in 0..kk {
                let col = &cols[r * ohw..(r + 1) * ohw];
                match cb {
                    4 => {
                        let w0 = wdata[c0 * kk + r].to_f64s();
                        let w1 = wdata[(c0 + 1) * kk + r].to_f64s();
                        let w2 = wdata[(c0 + 2) * kk + r].to_f64s();
                        let w3 = wdata[(c0 + 3) * kk + r].to_f64s();
                        let (a0, rest) = acc[c0 * ohw..].split_at_mut(ohw);
                        let (a1, rest) = rest.split_at_mut(ohw);
                        let (a2, rest) = rest.split_at_mut(ohw);
                        let a3 = &mut rest[..ohw];
                        for x in 0..ohw {
                            let cv = col[x].to_f64s();
                            a0[x] += w0 * cv;
                            a1[x] += w1 * cv;
                            a2[x] += w2 * cv;
                            a3[x] += w3 * cv;
                        }
                    }
                    _ => {
                        for c in c0..c0 + cb {
                            let wv = wdata[c * kk + r].to_f64s();
                            let a = &mut acc[c * ohw..(c + 1) * ohw];
                            for x in 0..ohw {
                                a[x] += wv * col[x].to_f64s();
                            }
                        }
                    }
                }
            }
            c0 += cb;
        }

        let out_sample = &mut out.data_mut()[s * co * ohw..(s + 1) * co * ohw];
        for c in 0..co {
            let b = bias.map_or(0.0, |b| b.data()[c].to_f64s());
            for x in 0..ohw {
                out_sample[c * ohw + x] = T::from_f64(acc[c * ohw + x] + b);
            }
        }
    }
    out.check_finite("conv2d", "")?;
    Ok(out)
}

pub struct ConvGrads<T> {
    pub dinput: Tensor<T>,
    pub dweight: Tensor<T>,
    /// Present iff the forward pass had a bias.
    pub dbias: Option<Tensor<T>>,
}

/// Gradients of `conv2d` w.r.t. input, weight and bias given upstream
/// `dout` `[n, co, oh, ow]`. `has_bias` mirrors the forward call.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    pad: usize,
    dout: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (co, k, h, w) = validate("conv2d_backward", input, weight, None, stride)?;
    let [n, ci, _, _] = input.shape();
    let (oh, ow) = match (out_dim(h, k, stride, pad), out_dim(w, k, stride, pad)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => return Err(Error::shape("conv2d_backward", "kernel exceeds padded input")),
    };
    if dout.shape() != [n, co, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("dout must be [{n}, {co}, {oh}, {ow}], got {:?}", dout.shape()),
        ));
    }
    let ohw = oh * ow;
    let kk = ci * k * k;
    let identity = is_identity_lowering(k, stride, pad);

    let mut dw_acc = vec![0.0f64; co * kk];
    let mut db_acc = vec![0.0f64; co];
    let mut dinput = Tensor::zeros([n, ci, h, w]);
    let mut cols_buf = if identity { Vec::new() } else { vec![T::ZERO; kk * ohw] };
    let mut colgrad = vec![0.0f64; kk * ohw];
    let wdata = weight.data();

    for s in 0..n {
        let cols: &[T] = if identity {
            let chw = ci * h * w;
            &input.data()[s * chw..(s + 1) * chw]
        } else {
            im2col(input, s, k, stride, pad, oh, ow, &mut cols_buf);
            &cols_buf
        };
        let dout_sample = &dout.data()[s * co * ohw..(s + 1) * co * ohw];

        // dW[c][r] += <dout_c, col_r>; four fixed partial sums keep the
        // reduction order deterministic while still vectorizing.
        for c in 0..co {
            let dr = &dout_sample[c * ohw..(c + 1) * ohw];
            let mut dsum = [0.0f64; 4];
            for x in 0..ohw {
                dsum[x & 3] += dr[x].to_f64s();
            }
            db_acc[c] += (dsum[0] + dsum[1]) + (dsum[2] + dsum[3]);
            for r in 0..kk {
                let col = &cols[r * ohw..(r + 1) * ohw];
                let mut p = [0.0f64; 4];
                let chunks = ohw / 4;
                for q in 0..chunks {
                    let x = q * 4;
                    p[0] += dr[x].to_f64s() * col[x].to_f64s();
                    p[1] += dr[x + 1].to_f64s() * col[x + 1].to_f64s();
                    p[2] += dr[x + 2].to_f64s() * col[x + 2].to_f64s();
                    p[3] += dr[x + 3].to_f64s() * col[x + 3].to_f64s();
                }
                for x in chunks * 4..ohw {
                    p[x & 3] += dr[x].to_f64s() * col[x].to_f64s();
                }
                dw_acc[c * kk + r] += (p[0] + p[1]) + (p[2] + p[3]);
            }
        }

        // colgrad[r] = sum_c W[c][r] * dout_c, then scatter back to pixels.
        colgrad.fill(0.0);
        for r in 0..kk {
            let cg = &mut colgrad[r * ohw..(r + 1) * ohw];
            for c in 0..co {
                let wv = wdata[c * kk + r].to_f64s();
                if wv == 0.0 {
                    continue;
                }
                let dr = &dout_sample[c * ohw..(c + 1) * ohw];
                for x in 0..ohw {
                    cg[x] += wv * dr[x].to_f64s();
                }
            }
        }

        if identity {
            let chw = ci * h * w;
            let din = &mut dinput.data_mut()[s * chw..(s + 1) * chw];
            for (d, g) in din.iter_mut().zip(colgrad.iter()) {
                *d = T::from_f64(*g);
            }
        } else {
            for c in 0..ci {
                let mut plane = vec![0.0f64; h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = ((c * k + ky) * k + kx) * ohw;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = iy as usize * w;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                plane[base + ix as usize] += colgrad[row + oy * ow + ox];
                            }
                        }
                    }
                }
                let dst = dinput.plane_mut(s, c);
                for (d, v) in dst.iter_mut().zip(plane.iter()) {
                    *d = T::from_f64(*v);
                }
            }
        }
    }

    let dweight = Tensor::from_vec(
        weight.shape(),
        dw_acc.iter().map(|&v| T::from_f64(v)).collect(),
    )?;
    let dbias = if has_bias {
        Some(Tensor::from_vec(
            [1, co, 1, 1],
            db_acc.iter().map(|&v| T::from_f64(v)).collect(),
        )?)
    } else {
        None
    };
    Ok(ConvGrads { dinput, dweight, dbias })
}

/// Direct definition of `conv2d`; used as a test oracle.
pub fn conv2d_naive<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (co, k, h, w) = validate("conv2d_naive", input, weight, bias, stride)?;
    let [n, ci, _, _] = input.shape();
    let (oh, ow) = match (out_dim(h, k, stride, pad), out_dim(w, k, stride, pad)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => return Err(Error::shape("conv2d_naive", "kernel exceeds padded input")),
    };
    let mut out = Tensor::zeros([n, co, oh, ow]);
    for s in 0..n {
        for c in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b.data()[c].to_f64s());
                    for ic in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += input.at(s, ic, iy as usize, ix as usize).to_f64s()
                                    * weight.at(c, ic, ky, kx).to_f64s();
                            }
                        }
                    }
                    out.set(s, c, oy, ox, T::from_f64(acc));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    // 3x3 identity kernel leaves the image unchanged under same padding.
    #[test]
    fn identity_kernel_same_padding() {
        let input =
            Tensor::<f32>::from_vec([1, 1, 3, 4], (0..12).map(|i| i as f32).collect()).unwrap();
        let mut weight = Tensor::<f32>::zeros([1, 1, 3, 3]);
        weight.set(0, 0, 1, 1, 1.0);
        let out = conv2d(&input, &weight, None, 1, 1).unwrap();
        assert_eq!(out, input);
    }

    // Hand-computed 2x2 valid convolution.
    #[test]
    fn hand_checked_2x2_valid() {
        let input =
            Tensor::<f32>::from_vec([1, 1, 3, 3], vec![1., 2., 3., 4., 5., 6., 7., 8., 9.])
                .unwrap();
        let weight = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1., 0., 0., -1.]).unwrap();
        let bias = Tensor::<f32>::from_vec([1, 1, 1, 1], vec![0.5]).unwrap();
        let out = conv2d(&input, &weight, Some(&bias), 1, 0).unwrap();
        assert_eq!(out.shape(), [1, 1, 2, 2]);
        // each output = top-left - bottom-right + 0.5 = -4 + 0.5
        assert_eq!(out.data(), &[-3.5, -3.5, -3.5, -3.5]);
    }

    #[test]
    fn stride_two_shapes() {
        let input = Tensor::<f32>::zeros([2, 3, 9, 11]);
        let weight = Tensor::<f32>::zeros([5, 3, 3, 3]);
        let out = conv2d(&input, &weight, None, 2, 1).unwrap();
        assert_eq!(out.shape(), [2, 5, 5, 6]);
    }

    #[test]
    fn kernel_larger_than_padded_input_errors() {
        let input = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let weight = Tensor::<f32>::zeros([1, 1, 5, 5]);
        assert!(conv2d(&input, &weight, None, 1, 1).is_err());
    }

    #[test]
    fn matches_naive_on_fixed_case() {
        // deterministic pseudo-random fill without pulling in rand here
        let mut v = 0.371f32;
        let mut next = || {
            v = (v * 16807.0).fract() - 0.5;
            v
        };
        let input = Tensor::<f32>::from_vec([2, 3, 7, 6], (0..252).map(|_| next()).collect()).unwrap();
        let weight = Tensor::<f32>::from_vec([4, 3, 3, 3], (0..108).map(|_| next()).collect()).unwrap();
        let bias = Tensor::<f32>::from_vec([1, 4, 1, 1], (0..4).map(|_| next()).collect()).unwrap();
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 2), (3, 0)] {
            let fast = conv2d(&input, &weight, Some(&bias), stride, pad).unwrap();
            let slow = conv2d_naive(&input, &weight, Some(&bias), stride, pad).unwrap();
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn one_by_one_fast_path_matches_naive() {
        let mut v = 0.537f32;
        let mut next = || {
            v = (v * 16807.0).fract() - 0.5;
            v
        };
        let input = Tensor::<f32>::from_vec([1, 5, 4, 4], (0..80).map(|_| next()).collect()).unwrap();
        let weight = Tensor::<f32>::from_vec([3, 5, 1, 1], (0..15).map(|_| next()).collect()).unwrap();
        let fast = conv2d(&input, &weight, None, 1, 0).unwrap();
        let slow = conv2d_naive(&input, &weight, None, 1, 0).unwrap();
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}
