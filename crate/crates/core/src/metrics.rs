//! Quality metrics: PSNR, SSIM, MS-SSIM, multi-exposure PSNR, Lab MSE,
//! per-channel histograms.
//!
//! All metrics are pure functions over tensors, accumulate in f64, and are
//! symmetric in their two image arguments. PSNR is computed jointly over all
//! provided planes (one MSE); SSIM-family metrics operate on a single plane
//! (conventionally luma).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR of identical inputs has no finite value; force callers to handle it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsnrResult {
    Db(f64),
    Infinite,
}

impl PsnrResult {
    pub fn db_or(self, cap: f64) -> f64 {
        match self {
            PsnrResult::Db(v) => v,
            PsnrResult::Infinite => cap,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, PsnrResult::Infinite)
    }
}

impl std::fmt::Display for PsnrResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PsnrResult::Db(v) => write!(f, "{v}"),
            PsnrResult::Infinite => write!(f, "inf"),
        }
    }
}

/// Channel space a metric was computed in, recorded in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChannelSpace {
    Yuv,
    LinearRgb,
    Lab,
    LOnly,
}

/// One metric result plus every setting needed to reproduce it.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub channel_space: ChannelSpace,
    pub params: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(name: &str, value: f64, channel_space: ChannelSpace) -> Self {
        MetricReport {
            name: name.to_string(),
            value,
            channel_space,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    /// Line-oriented text form: `name<TAB>value`. Non-finite values print as
    /// `inf` so downstream parsers see a token, not a panic.
    pub fn line(&self) -> String {
        if self.value.is_finite() {
            format!("{}\t{}", self.name, self.value)
        } else {
            format!("{}\tinf", self.name)
        }
    }
}

fn check_same_shape(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn mse_into(a: &Tensor<f32>, b: &Tensor<f32>, sum: &mut f64, count: &mut usize) {
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        let d = x as f64 - y as f64;
        *sum += d * d;
    }
    *count += a.len();
}

/// PSNR in dB over all samples of one tensor pair, `10*log10(peak^2 / MSE)`.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<PsnrResult> {
    psnr_planes(std::slice::from_ref(a), std::slice::from_ref(b), peak)
}

/// PSNR with one MSE pooled jointly across all plane pairs. Planes may have
/// different sizes from each other (e.g. subsampled chroma) but each pair
/// must match.
pub fn psnr_planes(a: &[Tensor<f32>], b: &[Tensor<f32>], peak: f64) -> Result<PsnrResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(
            "psnr",
            format!("{} planes vs {}", a.len(), b.len()),
        ));
    }
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::arg("psnr", format!("peak must be positive, got {peak}")));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.iter().zip(b.iter()) {
        check_same_shape("psnr", pa, pb)?;
        mse_into(pa, pb, &mut sum, &mut count);
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        Ok(PsnrResult::Infinite)
    } else {
        Ok(PsnrResult::Db(10.0 * (peak * peak / mse).log10()))
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn single_plane_f64(op: &'static str, t: &Tensor<f32>) -> Result<(usize, usize, Vec<f64>)> {
    let s = t.shape();
    if s[0] != 1 || s[1] != 1 {
        return Err(Error::shape(
            op,
            format!("expected a single plane [1,1,h,w], got {s:?}"),
        ));
    }
    Ok((s[2], s[3], t.data().iter().map(|&v| v as f64).collect()))
}

/// Separable valid-mode filtering with an odd symmetric kernel: horizontal
/// pass then vertical pass. Output is (h-k+1) x (w-k+1).
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut hpass = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * row[x + i];
            }
            hpass[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * hpass[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean full SSIM index and mean contrast-structure term over valid windows.
fn ssim_terms(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<(f64, f64)> {
    check_same_shape("ssim", a, b)?;
    let (h, w, pa) = single_plane_f64("ssim", a)?;
    let (_, _, pb) = single_plane_f64("ssim", b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::arg(
            "ssim",
            format!("input {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let k = gaussian_kernel();
    let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = pa.iter().zip(pb.iter()).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&pa, h, w, &k);
    let mu_b = filter_valid(&pb, h, w, &k);
    let e_aa = filter_valid(&aa, h, w, &k);
    let e_bb = filter_valid(&bb, h, w, &k);
    let e_ab = filter_valid(&ab, h, w, &k);

    // peak fixed at 1.0: all image data in this pipeline is normalized
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut sum_ssim = 0.0;
    let mut sum_cs = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = (e_aa[i] - ma * ma).max(0.0);
        let vb = (e_bb[i] - mb * mb).max(0.0);
        let cov = e_ab[i] - ma * mb;
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        sum_ssim += l * cs;
        sum_cs += cs;
    }
    let n = mu_a.len() as f64;
    Ok((sum_ssim / n, sum_cs / n))
}

/// Mean local SSIM over valid (unpadded) windows of a single plane.
/// Gaussian window 11x11 sigma 1.5, k1 0.01, k2 0.03, peak 1.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    ssim_terms(a, b).map(|(s, _)| s)
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// MS-SSIM value plus how many dyadic scales were actually used. Inputs
/// smaller than 176 on a side cannot support all 5 scales; the count drops
/// so the coarsest plane still fits the SSIM window, and the scale weights
/// are renormalized over the scales kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsimResult {
    pub value: f64,
    pub scales: usize,
}

fn downsample_2x2(src: &[f64], h: usize, w: usize) -> (usize, usize, Vec<f64>) {
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let base = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
        }
    }
    (oh, ow, out)
}

fn tensor_from_plane(h: usize, w: usize, data: Vec<f64>) -> Tensor<f32> {
    Tensor::from_vec([1, 1, h, w], data.into_iter().map(|v| v as f32).collect()).unwrap()
}

/// Multi-scale SSIM: contrast-structure means at the finer scales, the full
/// SSIM mean at the coarsest, combined as a weighted geometric product.
/// A single-scale input reduces exactly to `ssim`.
pub fn ms_ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<MsSsimResult> {
    check_same_shape("ms_ssim", a, b)?;
    let (h, w, mut pa) = single_plane_f64("ms_ssim", a)?;
    let (_, _, mut pb) = single_plane_f64("ms_ssim", b)?;

    let mut scales = 0usize;
    let (mut sh, mut sw) = (h, w);
    while scales < MS_SSIM_WEIGHTS.len() && sh >= SSIM_WINDOW && sw >= SSIM_WINDOW {
        scales += 1;
        sh /= 2;
        sw /= 2;
    }
    if scales == 0 {
        return Err(Error::arg(
            "ms_ssim",
            format!("input {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let weight_sum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();

    let (mut ch, mut cw) = (h, w);
    let mut value = 1.0;
    for level in 0..scales {
        let ta = tensor_from_plane(ch, cw, pa.clone());
        let tb = tensor_from_plane(ch, cw, pb.clone());
        let (mean_ssim, mean_cs) = ssim_terms(&ta, &tb)?;
        let term = if level + 1 == scales { mean_ssim } else { mean_cs };
        if scales == 1 {
            // weight is exactly 1: keep the plain SSIM value, sign included
            value = term;
            break;
        }
        let weight = MS_SSIM_WEIGHTS[level] / weight_sum;
        // negative means would make fractional powers undefined
        value *= term.max(0.0).powf(weight);
        if level + 1 < scales {
            let (nh, nw, na) = downsample_2x2(&pa, ch, cw);
            let (_, _, nb) = downsample_2x2(&pb, ch, cw);
            ch = nh;
            cw = nw;
            pa = na;
            pb = nb;
        }
    }
    Ok(MsSsimResult { value, scales })
}

pub const MPSNR_STOPS: [i32; 7] = [-3, -2, -1, 0, 1, 2, 3];
const MPSNR_GAMMA: f64 = 2.2;

/// Multi-exposure PSNR over linear-light frames: each stop c re-exposes by
/// 2^c, display-gamma maps to 8-bit range without rounding, and the MSE is
/// averaged over all stops. Errors if every sample saturates the tonemap at
/// every stop in both frames (no exposure carries signal).
pub fn mpsnr(a: &Tensor<f32>, b: &Tensor<f32>, stops: &[i32]) -> Result<PsnrResult> {
    check_same_shape("mpsnr", a, b)?;
    if stops.is_empty() {
        return Err(Error::arg("mpsnr", "empty stop list"));
    }
    let mut sum = 0.0;
    let mut any_unclipped = false;
    for &c in stops {
        let scale = (c as f64).exp2();
        for (&xa, &xb) in a.data().iter().zip(b.data().iter()) {
            let ra = (scale * xa as f64).max(0.0).powf(1.0 / MPSNR_GAMMA);
            let rb = (scale * xb as f64).max(0.0).powf(1.0 / MPSNR_GAMMA);
            if ra < 1.0 || rb < 1.0 {
                any_unclipped = true;
            }
            let d = (ra.min(1.0) - rb.min(1.0)) * 255.0;
            sum += d * d;
        }
    }
    if !any_unclipped {
        return Err(Error::arg(
            "mpsnr",
            "all samples clipped at every exposure stop",
        ));
    }
    let mse = sum / (stops.len() * a.len()) as f64;
    if mse == 0.0 {
        Ok(PsnrResult::Infinite)
    } else {
        Ok(PsnrResult::Db(10.0 * (255.0 * 255.0 / mse).log10()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabMode {
    Lab,
    LOnly,
}

/// Mean squared error between two L*a*b* images: per pixel the squared
/// Euclidean distance over (L*,a*,b*), or the squared L* difference alone.
pub fn lab_mse(a: &Tensor<f32>, b: &Tensor<f32>, mode: LabMode) -> Result<f64> {
    check_same_shape("lab_mse", a, b)?;
    let s = a.shape();
    if s[0] != 1 || s[1] != 3 {
        return Err(Error::shape(
            "lab_mse",
            format!("expected [1,3,h,w] Lab image, got {s:?}"),
        ));
    }
    let plane = s[2] * s[3];
    let da = a.data();
    let db = b.data();
    let channels = match mode {
        LabMode::Lab => 3,
        LabMode::LOnly => 1,
    };
    let mut sum = 0.0;
    for ch in 0..channels {
        for i in 0..plane {
            let d = da[ch * plane + i] as f64 - db[ch * plane + i] as f64;
            sum += d * d;
        }
    }
    Ok(sum / plane as f64)
}

pub const HISTOGRAM_BINS: usize = 128;

/// Equal-width histogram over [0,1] per channel. Out-of-range values land in
/// the end bins; counts per channel always sum to h*w.
pub fn color_histogram(t: &Tensor<f32>, bins: usize) -> Result<Vec<Vec<u64>>> {
    if bins == 0 {
        return Err(Error::arg("color_histogram", "bins must be positive"));
    }
    let s = t.shape();
    if s[0] != 1 {
        return Err(Error::shape(
            "color_histogram",
            format!("expected [1,c,h,w], got {s:?}"),
        ));
    }
    let plane = s[2] * s[3];
    let data = t.data();
    let mut out = Vec::with_capacity(s[1]);
    for ch in 0..s[1] {
        let mut counts = vec![0u64; bins];
        for i in 0..plane {
            let v = data[ch * plane + i] as f64;
            let bin = ((v * bins as f64).floor() as i64).clamp(0, bins as i64 - 1);
            counts[bin as usize] += 1;
        }
        out.push(counts);
    }
    Ok(out)
}

/// Per-bin ratio of counts to a reference histogram. Bins empty in both are
/// reported as 1.0 (agreement); mass where the reference has none is +inf.
/// Mean absolute second difference along x, pooled over channels and rows,
/// reported per horizontal band. Bands split the height the same way the
/// color-bar chart stacks its hues, so band k scores hue k's transitions.
pub fn band_smoothness(px: &Tensor<f32>, bands: usize) -> Result<Vec<f64>> {
    let [n, c, h, w] = px.shape();
    if n != 1 || c == 0 {
        return Err(Error::shape(
            "band_smoothness",
            format!("expected [1,c,h,w], got {:?}", px.shape()),
        ));
    }
    if bands == 0 || bands > h || w < 3 {
        return Err(Error::arg(
            "band_smoothness",
            format!("{bands} bands over {h}x{w} image"),
        ));
    }
    let mut sums = vec![0.0f64; bands];
    let mut counts = vec![0usize; bands];
    let data = px.data();
    let plane = h * w;
    for ch in 0..c {
        for y in 0..h {
            let band = (y * bands / h).min(bands - 1);
            let row = &data[ch * plane + y * w..ch * plane + (y + 1) * w];
            for x in 1..w - 1 {
                let dd = row[x + 1] as f64 - 2.0 * row[x] as f64 + row[x - 1] as f64;
                sums[band] += dd.abs();
                counts[band] += 1;
            }
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &k)| s / k as f64)
        .collect())
}

pub fn normalize_histogram(counts: &[u64], reference: &[u64]) -> Result<Vec<f64>> {
    if counts.len() != reference.len() {
        return Err(Error::shape(
            "normalize_histogram",
            format!("{} bins vs {}", counts.len(), reference.len()),
        ));
    }
    Ok(counts
        .iter()
        .zip(reference.iter())
        .map(|(&c, &r)| {
            if r == 0 {
                if c == 0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else {
                c as f64 / r as f64
            }
        })
        .collect())
}
