//! Synthetic tone mapping between linear HDR (wide gamut, 1.0 = 10000 nits)
//! and linear SDR (narrow gamut, [0,1]). The forward map is the SDR side of
//! the dataset degradation; it is exactly invertible below the clip region,
//! which lets tests construct ground-truth HDR for any in-range SDR input.

use super::gamut::{convert_gamut, Gamut};

/// Reinhard knee: 1.0 = 10000 nits input scale, 100 nits maps to 1.0.
pub const DEFAULT_KNEE: f64 = 0.01;

/// Soft shoulder: identity below 0.9, exponential saturation toward 1.0
/// above it. Strictly monotone on [0, inf).
pub fn soft_clip(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x <= 0.9 {
        x
    } else {
        0.9 + 0.1 * (1.0 - (-(x - 0.9) / 0.1).exp())
    }
}

/// Inverse of [`soft_clip`] for y in [0, 1); the shoulder never reaches 1.
pub fn soft_clip_inv(y: f64) -> Option<f64> {
    if !(0.0..1.0).contains(&y) {
        return None;
    }
    if y <= 0.9 {
        Some(y)
    } else {
        Some(0.9 - 0.1 * (1.0 - (y - 0.9) / 0.1).ln())
    }
}

/// 100 nits on the 10000-nit normalized axis.
const SDR_WHITE: f64 = 0.01;

fn reinhard(x: f64, k: f64) -> f64 {
    // normalized so 100 nits maps to exactly 1.0 for any knee
    let n = (SDR_WHITE + k) / SDR_WHITE;
    let r = x.max(0.0);
    r / (r + k) * n
}

fn reinhard_inv(y: f64, k: f64) -> Option<f64> {
    // y = n*x/(x+k)  =>  x = k*y/(n-y), valid for y < n
    let n = (SDR_WHITE + k) / SDR_WHITE;
    if !(0.0..n).contains(&y) {
        return None;
    }
    Some(k * y / (n - y))
}

/// Linear wide-gamut HDR -> linear narrow-gamut SDR in [0,1]:
/// per-channel normalized Reinhard, gamut reduction, soft clip.
pub fn tone_map_forward(rgb_hdr: [f64; 3], knee: f64) -> [f64; 3] {
    let compressed = [
        reinhard(rgb_hdr[0], knee),
        reinhard(rgb_hdr[1], knee),
        reinhard(rgb_hdr[2], knee),
    ];
    let narrow = convert_gamut(compressed, Gamut::Bt2020, Gamut::Bt709);
    [
        soft_clip(narrow[0]),
        soft_clip(narrow[1]),
        soft_clip(narrow[2]),
    ]
}

/// Exact inverse of [`tone_map_forward`] where one exists: every channel of
/// the SDR input must be in [0, 1) and the un-clipped wide-gamut channels
/// must be non-negative. Returns linear wide-gamut HDR.
pub fn tone_map_inverse(rgb_sdr: [f64; 3], knee: f64) -> Option<[f64; 3]> {
    let unclipped = [
        soft_clip_inv(rgb_sdr[0])?,
        soft_clip_inv(rgb_sdr[1])?,
        soft_clip_inv(rgb_sdr[2])?,
    ];
    let wide = convert_gamut(unclipped, Gamut::Bt709, Gamut::Bt2020);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = reinhard_inv(wide[i], knee)?;
    }
    Some(out)
}
