//! Synthetic HDR scene generation, the paired degradation chain that turns
//! one linear-light scene into an (LR SDR, HR HDR) training pair, and the
//! color-bar test chart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{
    dequantize, gamma_oetf, map_rgb, map_values, pq_oetf, quantize, rgb_to_yuv, rgb_to_yuv_image,
    tone_map_forward, ChromaFormat, Frame, Gamut, Transfer, DEFAULT_KNEE,
};
use crate::error::{Error, Result};
use crate::image_ops::bicubic_resize;
use crate::tensor::Tensor;

/// Bilinearly interpolated random grid, the building block of the texture
/// layer. Values in [0,1].
struct ValueNoise {
    grid: Vec<f64>,
    gw: usize,
    cell: f64,
}

impl ValueNoise {
    fn new(w: usize, h: usize, cell: usize, rng: &mut ChaCha8Rng) -> ValueNoise {
        let cell = cell.max(2);
        let gw = w / cell + 2;
        let gh = h / cell + 2;
        let grid = (0..gw * gh).map(|_| rng.gen_range(0.0..1.0)).collect();
        ValueNoise {
            grid,
            gw,
            cell: cell as f64,
        }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        let sx = x as f64 / self.cell;
        let sy = y as f64 / self.cell;
        let x0 = sx.floor() as usize;
        let y0 = sy.floor() as usize;
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let g = |yy: usize, xx: usize| self.grid[yy * self.gw + xx];
        (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x0 + 1))
            + fy * ((1.0 - fx) * g(y0 + 1, x0) + fx * g(y0 + 1, x0 + 1))
    }
}

/// Deterministic linear-light BT.2020 HDR scene on the absolute PQ axis
/// (1.0 = 10000 nits). Composites a color gradient, multi-octave texture,
/// hard-edged color patches and bars, and sparse specular highlights, so
/// both the resolution and the dynamic-range mapping have signal to learn.
pub fn synth_scene(seed: u64, w: usize, h: usize) -> Result<Frame> {
    if w == 0 || h == 0 {
        return Err(Error::arg("synth_scene", "dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // all random draws happen up front in a fixed order
    let grad_color = |rng: &mut ChaCha8Rng, lum: f64| -> [f64; 3] {
        let raw: [f64; 3] = [
            rng.gen_range(0.2..1.0),
            rng.gen_range(0.2..1.0),
            rng.gen_range(0.2..1.0),
        ];
        let m = raw[0].max(raw[1]).max(raw[2]);
        [raw[0] / m * lum, raw[1] / m * lum, raw[2] / m * lum]
    };
    let lum0 = rng.gen_range(0.002..0.02);
    let lum1 = rng.gen_range(0.002..0.02);
    let c0 = grad_color(&mut rng, lum0);
    let c1 = grad_color(&mut rng, lum1);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dir_x, dir_y) = (theta.cos(), theta.sin());

    let base_cell = (h.min(w) / 8).max(2);
    let octaves = [
        ValueNoise::new(w, h, base_cell, &mut rng),
        ValueNoise::new(w, h, (base_cell / 2).max(2), &mut rng),
        ValueNoise::new(w, h, (base_cell / 4).max(2), &mut rng),
    ];

    struct Patch {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        color: [f64; 3],
    }
    let n_patches = rng.gen_range(4..8usize);
    let patches: Vec<Patch> = (0..n_patches)
        .map(|_| {
            let pw = rng.gen_range(w / 8 + 1..w / 3 + 2).min(w);
            let ph = rng.gen_range(h / 8 + 1..h / 3 + 2).min(h);
            let x0 = rng.gen_range(0..=w - pw);
            let y0 = rng.gen_range(0..=h - ph);
            // one saturated channel spans the wide gamut
            let hot = rng.gen_range(0..3usize);
            let lum = rng.gen_range(0.004..0.04);
            let mut color = [
                rng.gen_range(0.0..0.6),
                rng.gen_range(0.0..0.6),
                rng.gen_range(0.0..0.6),
            ];
            color[hot] = 1.0;
            Patch {
                x0,
                y0,
                x1: x0 + pw,
                y1: y0 + ph,
                color: [color[0] * lum, color[1] * lum, color[2] * lum],
            }
        })
        .collect();

    struct Bar {
        vertical: bool,
        pos: usize,
        thick: usize,
        gain: f64,
    }
    let n_bars = rng.gen_range(2..5usize);
    let bars: Vec<Bar> = (0..n_bars)
        .map(|_| {
            let vertical = rng.gen_bool(0.5);
            let extent = if vertical { w } else { h };
            Bar {
                vertical,
                pos: rng.gen_range(0..extent),
                thick: rng.gen_range(1..4usize),
                gain: if rng.gen_bool(0.5) { 4.0 } else { 0.25 },
            }
        })
        .collect();

    struct Spec {
        cx: f64,
        cy: f64,
        sigma: f64,
        peak: f64,
    }
    let n_spec = rng.gen_range(3..7usize);
    let specs: Vec<Spec> = (0..n_spec)
        .map(|_| Spec {
            cx: rng.gen_range(0.0..w as f64),
            cy: rng.gen_range(0.0..h as f64),
            sigma: rng.gen_range(1.0..(h.min(w) as f64 / 12.0).max(1.5)),
            peak: rng.gen_range(0.15..1.0),
        })
        .collect();

    let diag = ((w * w + h * h) as f64).sqrt();
    let mut planes = [vec![0f32; h * w], vec![0f32; h * w], vec![0f32; h * w]];
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 * dir_x + y as f64 * dir_y) / diag + 1.0) / 2.0;
            let mut px = [
                c0[0] + (c1[0] - c0[0]) * t,
                c0[1] + (c1[1] - c0[1]) * t,
                c0[2] + (c1[2] - c0[2]) * t,
            ];
            for p in &patches {
                if x >= p.x0 && x < p.x1 && y >= p.y0 && y < p.y1 {
                    px = p.color;
                }
            }
            let noise = (octaves[0].at(x, y)
                + 0.5 * octaves[1].at(x, y)
                + 0.25 * octaves[2].at(x, y))
                / 1.75;
            let mut gain = 0.6 + 0.8 * noise;
            for b in &bars {
                let c = if b.vertical { x } else { y };
                if c >= b.pos && c < b.pos + b.thick {
                    gain *= b.gain;
                }
            }
            let mut spec_add = 0.0;
            for s in &specs {
                let d2 = (x as f64 - s.cx).powi(2) + (y as f64 - s.cy).powi(2);
                spec_add += s.peak * (-d2 / (2.0 * s.sigma * s.sigma)).exp();
            }
            for ch in 0..3 {
                let v = (px[ch] * gain + spec_add).clamp(0.0, 1.0);
                planes[ch][y * w + x] = v as f32;
            }
        }
    }
    let [r, g, b] = planes;
    Frame::from_planes(
        [
            Tensor::from_plane(h, w, r)?,
            Tensor::from_plane(h, w, g)?,
            Tensor::from_plane(h, w, b)?,
        ],
        Gamut::Bt2020,
        Transfer::Linear,
        ChromaFormat::Rgb,
        16,
    )
}

fn snap_to_grid(t: &Tensor<f32>, bits: u8) -> Tensor<f32> {
    map_values(t, |v| dequantize(quantize(v, bits), bits))
}

/// Produce the training pair for one linear-light BT.2020 scene.
///
/// HR arm: PQ encode -> YUV (BT.2020) -> 10-bit grid.
/// LR arm: tone map to narrow-gamut SDR -> SDR gamma encode -> bicubic
/// downscale -> YUV (BT.709) -> 8-bit grid.
pub fn degrade(hdr: &Frame, scale: usize) -> Result<(Frame, Frame)> {
    if scale != 2 && scale != 4 {
        return Err(Error::arg("degrade", format!("scale {scale} not 2 or 4")));
    }
    if hdr.chroma != ChromaFormat::Rgb
        || hdr.transfer != Transfer::Linear
        || hdr.gamut != Gamut::Bt2020
    {
        return Err(Error::arg(
            "degrade",
            "input must be a linear-light BT.2020 RGB frame",
        ));
    }
    let (h, w) = (hdr.height(), hdr.width());
    if h % scale != 0 || w % scale != 0 {
        return Err(Error::arg(
            "degrade",
            format!("{h}x{w} not divisible by scale {scale}"),
        ));
    }
    let px = hdr.pixels()?;

    let hr_yuv = rgb_to_yuv_image(&map_values(&px, pq_oetf), Gamut::Bt2020)?;
    let hr = Frame::from_pixels(
        &snap_to_grid(&hr_yuv, 10),
        Gamut::Bt2020,
        Transfer::Pq,
        ChromaFormat::Yuv444,
        10,
    )?;

    let sdr_gamma = map_values(
        &map_rgb(&px, |rgb| tone_map_forward(rgb, DEFAULT_KNEE))?,
        gamma_oetf,
    );
    let lr_rgb = bicubic_resize(&sdr_gamma, 1, scale)?;
    let lr_yuv = rgb_to_yuv_image(&lr_rgb, Gamut::Bt709)?;
    let lr = Frame::from_pixels(
        &snap_to_grid(&lr_yuv, 8),
        Gamut::Bt709,
        Transfer::GammaSdr,
        ChromaFormat::Yuv444,
        8,
    )?;
    Ok((lr, hr))
}

/// Hues of the color-bar chart: white plus saturated primaries and
/// secondaries, each a horizontal bar with a luminance ramp along x.
pub const COLOR_BAR_HUES: [[f64; 3]; 7] = [
    [1.0, 1.0, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
];

// ramp span kept below the soft-clip shoulder so the chart's ground-truth
// HDR mapping exists exactly
const BAR_RAMP_LO: f64 = 0.05;
const BAR_RAMP_HI: f64 = 0.85;

/// Deterministic 8-bit BT.709 SDR color-bar chart: stacked hue bars whose
/// linear intensity rises monotonically left to right.
pub fn color_bar(w: usize, h: usize) -> Result<Frame> {
    if w == 0 || h == 0 {
        return Err(Error::arg("color_bar", "dimensions must be positive"));
    }
    let bars = COLOR_BAR_HUES.len().min(h);
    let mut planes = [vec![0f32; h * w], vec![0f32; h * w], vec![0f32; h * w]];
    for y in 0..h {
        let bar = (y * bars / h).min(bars - 1);
        let hue = COLOR_BAR_HUES[bar];
        for x in 0..w {
            let t = if w == 1 { 0.0 } else { x as f64 / (w - 1) as f64 };
            let ramp = BAR_RAMP_LO + (BAR_RAMP_HI - BAR_RAMP_LO) * t;
            let rgb = [
                gamma_oetf(hue[0] * ramp),
                gamma_oetf(hue[1] * ramp),
                gamma_oetf(hue[2] * ramp),
            ];
            let yuv = rgb_to_yuv(rgb, Gamut::Bt709);
            for ch in 0..3 {
                planes[ch][y * w + x] = dequantize(quantize(yuv[ch], 8), 8) as f32;
            }
        }
    }
    let [py, pu, pv] = planes;
    Frame::from_planes(
        [
            Tensor::from_plane(h, w, py)?,
            Tensor::from_plane(h, w, pu)?,
            Tensor::from_plane(h, w, pv)?,
        ],
        Gamut::Bt709,
        Transfer::GammaSdr,
        ChromaFormat::Yuv444,
        8,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{gamma_eotf, tone_map_inverse, yuv_to_rgb};

    #[test]
    fn scene_is_deterministic_and_in_range() {
        let a = synth_scene(7, 48, 32).unwrap();
        let b = synth_scene(7, 48, 32).unwrap();
        assert_eq!(a, b);
        let c = synth_scene(8, 48, 32).unwrap();
        assert_ne!(a, c);
        for p in &a.planes {
            assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn scenes_carry_highlights_above_sdr_range() {
        for seed in 0..6u64 {
            let f = synth_scene(seed, 64, 64).unwrap();
            let total = 64 * 64;
            // count pixels whose max channel exceeds 100 nits (0.01)
            let mut over = 0usize;
            for i in 0..total {
                let m = f.planes[0].data()[i]
                    .max(f.planes[1].data()[i])
                    .max(f.planes[2].data()[i]);
                if m > 0.01 {
                    over += 1;
                }
            }
            assert!(
                over as f64 / total as f64 >= 0.01,
                "seed {seed}: only {over}/{total} above SDR range"
            );
        }
    }

    #[test]
    fn degrade_shapes_tags_and_determinism() {
        let hdr = synth_scene(3, 160, 160).unwrap();
        let (lr, hr) = degrade(&hdr, 4).unwrap();
        assert_eq!((lr.width(), lr.height()), (40, 40));
        assert_eq!((hr.width(), hr.height()), (160, 160));
        assert_eq!((lr.bit_depth, lr.gamut, lr.transfer), (8, Gamut::Bt709, Transfer::GammaSdr));
        assert_eq!((hr.bit_depth, hr.gamut, hr.transfer), (10, Gamut::Bt2020, Transfer::Pq));
        assert_eq!(lr.chroma, ChromaFormat::Yuv444);
        let (lr2, hr2) = degrade(&hdr, 4).unwrap();
        assert_eq!(lr, lr2);
        assert_eq!(hr, hr2);
        // samples sit exactly on their quantization grids
        for p in &lr.planes {
            for &v in p.data() {
                let code = v as f64 * 255.0;
                assert!((code - code.round()).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn degrade_rejects_bad_inputs() {
        let hdr = synth_scene(4, 32, 32).unwrap();
        assert!(degrade(&hdr, 3).is_err());
        let odd = synth_scene(4, 30, 32).unwrap();
        assert!(degrade(&odd, 4).is_err());
        let (lr, _) = degrade(&hdr, 2).unwrap();
        assert!(degrade(&lr, 2).is_err());
    }

    #[test]
    fn color_bar_hues_ramps_and_grid() {
        let f = color_bar(64, 28).unwrap();
        assert_eq!(f, color_bar(64, 28).unwrap());
        assert_eq!((f.bit_depth, f.gamut, f.transfer), (8, Gamut::Bt709, Transfer::GammaSdr));

        // distinct hues: sample each bar's chroma midway up the ramp
        let mut seen = std::collections::BTreeSet::new();
        for bar in 0..7 {
            let y = bar * 4 + 2;
            let u = (f.planes[1].data()[y * 64 + 32] * 255.0).round() as i32;
            let v = (f.planes[2].data()[y * 64 + 32] * 255.0).round() as i32;
            seen.insert((u, v));
        }
        assert!(seen.len() >= 6, "only {} distinct hues", seen.len());

        // luminance monotone along the ramp axis in every row
        for y in 0..28 {
            let row = &f.planes[0].data()[y * 64..(y + 1) * 64];
            for x in 1..64 {
                assert!(row[x] >= row[x - 1], "row {y} not monotone at {x}");
            }
        }

        // every value on the 8-bit grid
        for p in &f.planes {
            for &v in p.data() {
                let code = v as f64 * 255.0;
                assert!((code - code.round()).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn color_bar_ground_truth_mapping_exists_everywhere() {
        let f = color_bar(48, 21).unwrap();
        let (h, w) = (f.height(), f.width());
        for y in 0..h {
            for x in 0..w {
                let yuv = [
                    f.planes[0].data()[y * w + x] as f64,
                    f.planes[1].data()[y * w + x] as f64,
                    f.planes[2].data()[y * w + x] as f64,
                ];
                let rgb = yuv_to_rgb(yuv, Gamut::Bt709);
                let lin = [
                    gamma_eotf(rgb[0].clamp(0.0, 1.0)),
                    gamma_eotf(rgb[1].clamp(0.0, 1.0)),
                    gamma_eotf(rgb[2].clamp(0.0, 1.0)),
                ];
                assert!(
                    tone_map_inverse(lin, DEFAULT_KNEE).is_some(),
                    "pixel ({y},{x}) has no HDR ground truth"
                );
            }
        }
    }
}
