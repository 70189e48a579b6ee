//! Classical image operators composed with the network: edge-aware guided
//! filtering (used to build the color prior input) and bicubic resampling
//! (used for the residual skip path and for dataset degradation).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Guided filter settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Window radius in pixels.
    pub radius: usize,
    /// Variance regularizer; larger values smooth more aggressively.
    pub eps: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            radius: 5,
            eps: 0.01,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::arg("guided_filter", "radius must be >= 1"));
        }
        if self.eps <= 0.0 {
            return Err(Error::arg("guided_filter", "eps must be > 0"));
        }
        Ok(())
    }
}

/// Windowed mean over a (2r+1)^2 box with replicate edges, one plane.
/// Running sums keep it O(HW) independent of the radius.
fn box_plane(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    // horizontal pass
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let mut sum = 0.0;
        for x in -(r as isize)..=r as isize {
            sum += row[clamp(x, w)];
        }
        tmp[y * w] = sum;
        for x in 1..w {
            sum += row[clamp(x as isize + r as isize, w)];
            sum -= row[clamp(x as isize - 1 - r as isize, w)];
            tmp[y * w + x] = sum;
        }
    }
    // vertical pass
    let norm = 1.0 / ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = vec![0.0f64; h * w];
    let mut col_sum = vec![0.0f64; w];
    for y in -(r as isize)..=r as isize {
        let row = &tmp[clamp(y, h) * w..clamp(y, h) * w + w];
        for x in 0..w {
            col_sum[x] += row[x];
        }
    }
    for x in 0..w {
        out[x] = col_sum[x] * norm;
    }
    for y in 1..h {
        let add = &tmp[clamp(y as isize + r as isize, h) * w..][..w];
        let sub = &tmp[clamp(y as isize - 1 - r as isize, h) * w..][..w];
        for x in 0..w {
            col_sum[x] += add[x] - sub[x];
            out[y * w + x] = col_sum[x] * norm;
        }
    }
    out
}

/// Box (mean) filter with replicate-edge handling, per channel plane.
pub fn box_filter<T: Scalar>(input: &Tensor<T>, radius: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if radius < 1 {
        return Err(Error::arg("box_filter", "radius must be >= 1"));
    }
    if h == 0 || w == 0 {
        return Err(Error::arg("box_filter", "empty plane"));
    }
    let mut out = Tensor::zeros(input.shape());
    for s in 0..n {
        for ch in 0..c {
            let src: Vec<f64> = input.plane(s, ch).iter().map(|v| v.to_f64s()).collect();
            let filtered = box_plane(&src, h, w, radius);
            let dst = out.plane_mut(s, ch);
            for (d, v) in dst.iter_mut().zip(filtered) {
                *d = T::from_f64(v);
            }
        }
    }
    Ok(out)
}

/// Self-guided filter: each channel guides itself. Returns the smoothed
/// "base" layer; the edge-aware behaviour comes from a = var/(var+eps).
pub fn guided_filter<T: Scalar>(input: &Tensor<T>, cfg: FilterConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    input.check_finite("guided_filter", "input")?;
    let [n, c, h, w] = input.shape();
    if h == 0 || w == 0 {
        return Err(Error::arg("guided_filter", "empty plane"));
    }
    let r = cfg.radius;
    let mut out = Tensor::zeros(input.shape());
    for s in 0..n {
        for ch in 0..c {
            let src: Vec<f64> = input.plane(s, ch).iter().map(|v| v.to_f64s()).collect();
            let sq: Vec<f64> = src.iter().map(|v| v * v).collect();
            let mean = box_plane(&src, h, w, r);
            let corr = box_plane(&sq, h, w, r);
            let mut a = vec![0.0f64; h * w];
            let mut b = vec![0.0f64; h * w];
            for i in 0..h * w {
                let var = (corr[i] - mean[i] * mean[i]).max(0.0);
                a[i] = var / (var + cfg.eps);
                b[i] = (1.0 - a[i]) * mean[i];
            }
            let mean_a = box_plane(&a, h, w, r);
            let mean_b = box_plane(&b, h, w, r);
            let dst = out.plane_mut(s, ch);
            for i in 0..h * w {
                dst[i] = T::from_f64(mean_a[i] * src[i] + mean_b[i]);
            }
        }
    }
    Ok(out)
}

/// Catmull-Rom-family cubic kernel with a = -0.5.
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-coordinate taps: 4 clamped source indices and their weights.
fn cubic_taps(src_len: usize, dst_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|o| {
            let sc = (o as f64 + 0.5) * ratio - 0.5;
            let base = sc.floor() as isize;
            let mut idx = [0usize; 4];
            let mut wgt = [0.0f64; 4];
            for k in 0..4 {
                let tap = base - 1 + k as isize;
                idx[k] = tap.clamp(0, src_len as isize - 1) as usize;
                wgt[k] = cubic_weight(sc - tap as f64);
            }
            (idx, wgt)
        })
        .collect()
}

/// Separable bicubic resize by the rational factor `num/den`
/// (both axes; output dims floor-scaled). Replicate edges,
/// center-aligned grid.
pub fn bicubic_resize<T: Scalar>(input: &Tensor<T>, num: usize, den: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if num == 0 || den == 0 {
        return Err(Error::arg("bicubic_resize", "scale terms must be positive"));
    }
    let oh = h * num / den;
    let ow = w * num / den;
    if oh < 1 || ow < 1 {
        return Err(Error::shape(
            "bicubic_resize",
            format!("scale {num}/{den} of {h}x{w} collapses to {oh}x{ow}"),
        ));
    }
    if num == den {
        return Ok(input.clone());
    }
    let taps_x = cubic_taps(w, ow);
    let taps_y = cubic_taps(h, oh);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut horiz = vec![0.0f64; h * ow];
    for s in 0..n {
        for ch in 0..c {
            let src = input.plane(s, ch);
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                let dst = &mut horiz[y * ow..(y + 1) * ow];
                for (x, (idx, wgt)) in taps_x.iter().enumerate() {
                    dst[x] = wgt[0] * row[idx[0]].to_f64s()
                        + wgt[1] * row[idx[1]].to_f64s()
                        + wgt[2] * row[idx[2]].to_f64s()
                        + wgt[3] * row[idx[3]].to_f64s();
                }
            }
            let dst = out.plane_mut(s, ch);
            for (y, (idx, wgt)) in taps_y.iter().enumerate() {
                let r0 = &horiz[idx[0] * ow..idx[0] * ow + ow];
                let r1 = &horiz[idx[1] * ow..idx[1] * ow + ow];
                let r2 = &horiz[idx[2] * ow..idx[2] * ow + ow];
                let r3 = &horiz[idx[3] * ow..idx[3] * ow + ow];
                for x in 0..ow {
                    dst[y * ow + x] = T::from_f64(
                        wgt[0] * r0[x] + wgt[1] * r1[x] + wgt[2] * r2[x] + wgt[3] * r3[x],
                    );
                }
            }
        }
    }
    Ok(out)
}
