//! Forward tensor ops other than convolution. Statistics and reductions
//! accumulate in f64 with a fixed order so results are reproducible across
//! runs regardless of the storage scalar.

use rand::Rng;

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Train/eval switch for ops whose behaviour differs between phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance for batch norm, both `[1, c, 1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> BnStats<T> {
    /// Fresh statistics: mean 0, variance 1. Valid for eval immediately,
    /// matching affine parameters initialized to the identity-free state.
    pub fn fresh(c: usize) -> Self {
        BnStats {
            mean: Tensor::zeros([1, c, 1, 1]),
            var: Tensor::filled([1, c, 1, 1], T::ONE),
        }
    }
}

/// `input` `[n, d_in, 1, 1]`, `weight` `[d_out, d_in, 1, 1]`, `bias`
/// `[1, d_out, 1, 1]` -> `[n, d_out, 1, 1]`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, d_in, h, w] = input.shape();
    let [d_out, w_in, wh, ww] = weight.shape();
    if h != 1 || w != 1 || wh != 1 || ww != 1 {
        return Err(Error::shape("linear", "expects [*, d, 1, 1] operands"));
    }
    if w_in != d_in {
        return Err(Error::shape(
            "linear",
            format!("weight expects {w_in} inputs, got {d_in}"),
        ));
    }
    if bias.shape() != [1, d_out, 1, 1] {
        return Err(Error::shape(
            "linear",
            format!("bias must be [1, {d_out}, 1, 1], got {:?}", bias.shape()),
        ));
    }
    let mut out = Tensor::zeros([n, d_out, 1, 1]);
    for s in 0..n {
        let x = &input.data()[s * d_in..(s + 1) * d_in];
        for o in 0..d_out {
            let row = &weight.data()[o * d_in..(o + 1) * d_in];
            let mut acc = bias.data()[o].to_f64s();
            for i in 0..d_in {
                acc += row[i].to_f64s() * x[i].to_f64s();
            }
            out.data_mut()[s * d_out + o] = T::from_f64(acc);
        }
    }
    out.check_finite("linear", "")?;
    Ok(out)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: f64) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&slope) || slope == 0.0 {
        return Err(Error::arg(
            "leaky_relu",
            format!("slope must be in (0, 1), got {slope}"),
        ));
    }
    let s = T::from_f64(slope);
    Ok(input.map(|v| if v > T::ZERO { v } else { s * v }))
}

fn plane_mean_var<T: Scalar>(data: &[T]) -> (f64, f64) {
    let m = data.len() as f64;
    let mean = data.iter().fold(0.0, |a, v| a + v.to_f64s()) / m;
    let var = data
        .iter()
        .fold(0.0, |a, v| {
            let d = v.to_f64s() - mean;
            a + d * d
        })
        / m;
    (mean, var)
}

/// Normalizes each (sample, channel) plane by its own mean/variance.
/// `gamma`/`beta` are `[1, c, 1, 1]`.
pub fn instance_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let [n, c, _, _] = input.shape();
    if gamma.shape() != [1, c, 1, 1] || beta.shape() != [1, c, 1, 1] {
        return Err(Error::shape(
            "instance_norm",
            format!("affine params must be [1, {c}, 1, 1]"),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::arg("instance_norm", "eps must be > 0"));
    }
    let mut out = Tensor::zeros(input.shape());
    for s in 0..n {
        for ch in 0..c {
            let (mean, var) = plane_mean_var(input.plane(s, ch));
            let inv = 1.0 / (var + eps).sqrt();
            let g = gamma.data()[ch].to_f64s();
            let b = beta.data()[ch].to_f64s();
            let src = input.plane(s, ch);
            let dst = out.plane_mut(s, ch);
            for (d, v) in dst.iter_mut().zip(src) {
                *d = T::from_f64((v.to_f64s() - mean) * inv * g + b);
            }
        }
    }
    out.check_finite("instance_norm", "")?;
    Ok(out)
}

/// Per-channel batch statistics over `(n, h, w)`: (mean, biased variance).
pub fn batch_channel_stats<T: Scalar>(input: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = input.shape();
    let m = (n * h * w) as f64;
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for s in 0..n {
            sum += input.plane(s, ch).iter().fold(0.0, |a, v| a + v.to_f64s());
        }
        let mean = sum / m;
        let mut ss = 0.0;
        for s in 0..n {
            ss += input.plane(s, ch).iter().fold(0.0, |a, v| {
                let d = v.to_f64s() - mean;
                a + d * d
            });
        }
        means[ch] = mean;
        vars[ch] = ss / m;
    }
    (means, vars)
}

/// Batch normalization.
///
/// Train: normalize with this batch's statistics (biased variance) and
/// return updated running stats blended with `momentum`
/// (`new = (1-momentum)*old + momentum*batch`, variance blended unbiased).
/// A `None` running state blends from the fresh (0, 1) state.
/// Eval: normalize with the provided running stats; `None` is an error.
pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<&BnStats<T>>,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, Option<BnStats<T>>)> {
    let [n, c, h, w] = input.shape();
    if gamma.shape() != [1, c, 1, 1] || beta.shape() != [1, c, 1, 1] {
        return Err(Error::shape(
            "batch_norm",
            format!("affine params must be [1, {c}, 1, 1]"),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::arg("batch_norm", "eps must be > 0"));
    }
    let mut out = Tensor::zeros(input.shape());
    match mode {
        Mode::Eval => {
            let stats = running.ok_or(Error::UninitializedStats)?;
            for ch in 0..c {
                let mean = stats.mean.data()[ch].to_f64s();
                let inv = 1.0 / (stats.var.data()[ch].to_f64s() + eps).sqrt();
                let g = gamma.data()[ch].to_f64s();
                let b = beta.data()[ch].to_f64s();
                for s in 0..n {
                    let src = input.plane(s, ch);
                    let dst = out.plane_mut(s, ch);
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d = T::from_f64((v.to_f64s() - mean) * inv * g + b);
                    }
                }
            }
            out.check_finite("batch_norm", "")?;
            Ok((out, None))
        }
        Mode::Train => {
            let m = n * h * w;
            if m < 2 {
                return Err(Error::arg(
                    "batch_norm",
                    format!("train mode needs n*h*w >= 2 per channel, got {m}"),
                ));
            }
            let (means, vars) = batch_channel_stats(input);
            let mut new_mean = Tensor::zeros([1, c, 1, 1]);
            let mut new_var = Tensor::zeros([1, c, 1, 1]);
            let unbias = m as f64 / (m as f64 - 1.0);
            for ch in 0..c {
                let inv = 1.0 / (vars[ch] + eps).sqrt();
                let g = gamma.data()[ch].to_f64s();
                let b = beta.data()[ch].to_f64s();
                for s in 0..n {
                    let src = input.plane(s, ch);
                    let dst = out.plane_mut(s, ch);
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d = T::from_f64((v.to_f64s() - means[ch]) * inv * g + b);
                    }
                }
                let (old_m, old_v) = match running {
                    Some(r) => (r.mean.data()[ch].to_f64s(), r.var.data()[ch].to_f64s()),
                    None => (0.0, 1.0),
                };
                new_mean.data_mut()[ch] =
                    T::from_f64((1.0 - momentum) * old_m + momentum * means[ch]);
                new_var.data_mut()[ch] =
                    T::from_f64((1.0 - momentum) * old_v + momentum * vars[ch] * unbias);
            }
            out.check_finite("batch_norm", "")?;
            Ok((
                out,
                Some(BnStats {
                    mean: new_mean,
                    var: new_var,
                }),
            ))
        }
    }
}

/// Non-overlapping window means (`k`, `stride`), no padding, floor division.
pub fn avg_pool<T: Scalar>(input: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if k == 0 || stride == 0 {
        return Err(Error::arg("avg_pool", "k and stride must be >= 1"));
    }
    if h < k || w < k {
        return Err(Error::shape(
            "avg_pool",
            format!("window {k} exceeds input {h}x{w}"),
        ));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let scale = 1.0 / (k * k) as f64;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for s in 0..n {
        for ch in 0..c {
            let src = input.plane(s, ch);
            let dst = out.plane_mut(s, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        let row = (oy * stride + ky) * w + ox * stride;
                        for kx in 0..k {
                            acc += src[row + kx].to_f64s();
                        }
                    }
                    dst[oy * ow + ox] = T::from_f64(acc * scale);
                }
            }
        }
    }
    Ok(out)
}

/// Mean over each channel plane -> `[n, c, 1, 1]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if h == 0 || w == 0 {
        return Err(Error::arg("global_avg_pool", "empty spatial dims"));
    }
    let m = (h * w) as f64;
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for s in 0..n {
        for ch in 0..c {
            let sum = input.plane(s, ch).iter().fold(0.0, |a, v| a + v.to_f64s());
            out.data_mut()[s * c + ch] = T::from_f64(sum / m);
        }
    }
    Ok(out)
}

/// Inverted dropout. Train returns the multiplier tensor (0 or 1/(1-p))
/// used, which is also the exact backward multiplier; eval is the identity.
pub fn dropout<T: Scalar, R: Rng>(
    input: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg("dropout", format!("p must be in [0, 1), got {p}")));
    }
    if mode == Mode::Eval {
        return Ok((input.clone(), None));
    }
    let keep_scale = T::from_f64(1.0 / (1.0 - p));
    let mut mult = Tensor::zeros(input.shape());
    for m in mult.data_mut() {
        *m = if rng.gen::<f64>() < p { T::ZERO } else { keep_scale };
    }
    let out = mul(input, &mult)?;
    Ok((out, Some(mult)))
}

pub struct DropBlockOut<T> {
    pub out: Tensor<T>,
    /// Multiplier applied; `None` in eval mode.
    pub mult: Option<Tensor<T>>,
    /// True when spatial dims were smaller than the block and plain dropout
    /// semantics were used instead.
    pub fell_back: bool,
}

/// DropBlock: zero `block`x`block` spatial squares so the expected kept
/// fraction is roughly `keep_prob`, then rescale survivors per plane.
/// Block centers are drawn per (sample, channel) only where the square fits
/// entirely, so every zeroed pixel belongs to a fully zeroed square.
pub fn drop_block<T: Scalar, R: Rng>(
    input: &Tensor<T>,
    block: usize,
    keep_prob: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<DropBlockOut<T>> {
    if !(0.0..=1.0).contains(&keep_prob) || keep_prob == 0.0 {
        return Err(Error::arg(
            "drop_block",
            format!("keep_prob must be in (0, 1], got {keep_prob}"),
        ));
    }
    if block == 0 || block % 2 == 0 {
        return Err(Error::arg("drop_block", "block must be odd and >= 1"));
    }
    let [n, c, h, w] = input.shape();
    if mode == Mode::Eval || keep_prob == 1.0 {
        return Ok(DropBlockOut {
            out: input.clone(),
            mult: None,
            fell_back: false,
        });
    }
    if h < block || w < block {
        let (out, mult) = dropout(input, 1.0 - keep_prob, mode, rng)?;
        return Ok(DropBlockOut {
            out,
            mult,
            fell_back: true,
        });
    }
    let r = block / 2;
    let valid = ((h - block + 1) * (w - block + 1)) as f64;
    let rate = (1.0 - keep_prob) / (block * block) as f64 * (h * w) as f64 / valid;
    let mut mult = Tensor::zeros(input.shape());
    let hw = h * w;
    for s in 0..n {
        for ch in 0..c {
            let mut mask = vec![1.0f64; hw];
            for cy in r..h - r {
                for cx in r..w - r {
                    if rng.gen::<f64>() < rate {
                        for y in cy - r..=cy + r {
                            mask[y * w + cx - r..y * w + cx + r + 1].fill(0.0);
                        }
                    }
                }
            }
            let kept: f64 = mask.iter().sum();
            let norm = if kept > 0.0 { hw as f64 / kept } else { 0.0 };
            let dst = mult.plane_mut(s, ch);
            for (d, m) in dst.iter_mut().zip(mask.iter()) {
                *d = T::from_f64(m * norm);
            }
        }
    }
    let out = mul(input, &mult)?;
    Ok(DropBlockOut {
        out,
        mult: Some(mult),
        fell_back: false,
    })
}

/// Depth-to-space: `[n, c*r*r, h, w]` -> `[n, c, h*r, w*r]` with
/// `out[n][c][y*r+a][x*r+b] = in[n][c*r*r + a*r + b][y][x]`.
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if r == 0 {
        return Err(Error::arg("pixel_shuffle", "r must be >= 1"));
    }
    if c % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("channels {c} not divisible by r^2 = {}", r * r),
        ));
    }
    let oc = c / (r * r);
    let mut out = Tensor::zeros([n, oc, h * r, w * r]);
    for s in 0..n {
        for co in 0..oc {
            for a in 0..r {
                for b in 0..r {
                    let src = input.plane(s, co * r * r + a * r + b);
                    let dst = out.plane_mut(s, co);
                    for y in 0..h {
                        let drow = (y * r + a) * (w * r);
                        for x in 0..w {
                            dst[drow + x * r + b] = src[y * w + x];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Space-to-depth inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if r == 0 {
        return Err(Error::arg("pixel_unshuffle", "r must be >= 1"));
    }
    if h % r != 0 || w % r != 0 {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial dims {h}x{w} not divisible by r = {r}"),
        ));
    }
    let (oh, ow) = (h / r, w / r);
    let mut out = Tensor::zeros([n, c * r * r, oh, ow]);
    for s in 0..n {
        for ch in 0..c {
            let src = input.plane(s, ch);
            for a in 0..r {
                for b in 0..r {
                    let dst = out.plane_mut(s, ch * r * r + a * r + b);
                    for y in 0..oh {
                        for x in 0..ow {
                            dst[y * ow + x] = src[(y * r + a) * w + x * r + b];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [an, ac, ah, aw] = a.shape();
    let [bn, bc, bh, bw] = b.shape();
    if an != bn || ah != bh || aw != bw {
        return Err(Error::shape(
            "concat_channels",
            format!("non-channel dims differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Tensor::zeros([an, ac + bc, ah, aw]);
    let (chw_a, chw_b) = (ac * ah * aw, bc * bh * bw);
    for s in 0..an {
        let dst = &mut out.data_mut()[s * (chw_a + chw_b)..(s + 1) * (chw_a + chw_b)];
        dst[..chw_a].copy_from_slice(&a.data()[s * chw_a..(s + 1) * chw_a]);
        dst[chw_a..].copy_from_slice(&b.data()[s * chw_b..(s + 1) * chw_b]);
    }
    Ok(out)
}

/// Split along channels at `c_a`; inverse of [`concat_channels`].
pub fn split_channels<T: Scalar>(t: &Tensor<T>, c_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = t.shape();
    if c_a == 0 || c_a >= c {
        return Err(Error::arg(
            "split_channels",
            format!("split point {c_a} outside 1..{c}"),
        ));
    }
    let mut a = Tensor::zeros([n, c_a, h, w]);
    let mut b = Tensor::zeros([n, c - c_a, h, w]);
    let hw = h * w;
    for s in 0..n {
        let src = &t.data()[s * c * hw..(s + 1) * c * hw];
        a.data_mut()[s * c_a * hw..(s + 1) * c_a * hw].copy_from_slice(&src[..c_a * hw]);
        b.data_mut()[s * (c - c_a) * hw..(s + 1) * (c - c_a) * hw]
            .copy_from_slice(&src[c_a * hw..]);
    }
    Ok((a, b))
}

pub(crate) fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0usize; 4];
    for i in 0..4 {
        out[i] = if a[i] == b[i] {
            a[i]
        } else if a[i] == 1 {
            b[i]
        } else if b[i] == 1 {
            a[i]
        } else {
            return Err(Error::shape(
                op,
                format!("cannot broadcast {a:?} with {b:?}"),
            ));
        };
    }
    Ok(out)
}

fn binary_broadcast<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let mut out = Tensor::zeros(a.shape());
        for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
            *o = f(x, y);
        }
        return Ok(out);
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let [n, c, h, w] = shape;
    let stride = |s: Shape| {
        let base = [s[1] * s[2] * s[3], s[2] * s[3], s[3], 1];
        [
            if s[0] == 1 { 0 } else { base[0] },
            if s[1] == 1 { 0 } else { base[1] },
            if s[2] == 1 { 0 } else { base[2] },
            if s[3] == 1 { 0 } else { base[3] },
        ]
    };
    let sa = stride(a.shape());
    let sb = stride(b.shape());
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    let (ad, bd) = (a.data(), b.data());
    let mut i = 0;
    for nn in 0..n {
        for cc in 0..c {
            for hh in 0..h {
                let ra = nn * sa[0] + cc * sa[1] + hh * sa[2];
                let rb = nn * sb[0] + cc * sb[1] + hh * sb[2];
                for ww in 0..w {
                    od[i] = f(ad[ra + ww * sa[3]], bd[rb + ww * sb[3]]);
                    i += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise sum with size-1 broadcasting on any axis.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_broadcast("add", a, b, |x, y| x + y)
}

/// Elementwise difference with size-1 broadcasting on any axis.
pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_broadcast("sub", a, b, |x, y| x - y)
}

/// Elementwise product with size-1 broadcasting on any axis.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_broadcast("mul", a, b, |x, y| x * y)
}

pub fn scale<T: Scalar>(t: &Tensor<T>, s: T) -> Tensor<T> {
    t.map(|v| v * s)
}

/// Sums `t` over every axis where `target` has size 1 but `t` does not.
/// Gradient counterpart of broadcasting. Accumulates in f64.
pub fn reduce_to_shape<T: Scalar>(t: &Tensor<T>, target: Shape) -> Result<Tensor<T>> {
    let ts = t.shape();
    for i in 0..4 {
        if target[i] != ts[i] && target[i] != 1 {
            return Err(Error::shape(
                "reduce_to_shape",
                format!("cannot reduce {ts:?} to {target:?}"),
            ));
        }
    }
    if target == ts {
        return Ok(t.clone());
    }
    let [n, c, h, w] = ts;
    let mut acc = vec![0.0f64; target.iter().product()];
    let tgt_idx = |nn: usize, cc: usize, hh: usize, ww: usize| {
        let nn = if target[0] == 1 { 0 } else { nn };
        let cc = if target[1] == 1 { 0 } else { cc };
        let hh = if target[2] == 1 { 0 } else { hh };
        let ww = if target[3] == 1 { 0 } else { ww };
        ((nn * target[1] + cc) * target[2] + hh) * target[3] + ww
    };
    let data = t.data();
    let mut i = 0;
    for nn in 0..n {
        for cc in 0..c {
            for hh in 0..h {
                for ww in 0..w {
                    acc[tgt_idx(nn, cc, hh, ww)] += data[i].to_f64s();
                    i += 1;
                }
            }
        }
    }
    Tensor::from_vec(target, acc.into_iter().map(T::from_f64).collect())
}
