//! Color pipeline: transfer functions, gamut conversion, YUV and Lab spaces,
//! quantization, the synthetic tone mapper, and the [`Frame`] container that
//! carries pixel planes together with their colorimetric metadata.

mod gamut;
mod tonemap;
mod transfer;

pub use gamut::*;
pub use tonemap::*;
pub use transfer::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transfer {
    /// SDR piecewise gamma curve.
    GammaSdr,
    /// Perceptual quantizer (absolute, 1.0 = 10000 nits).
    Pq,
    /// Linear light.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChromaFormat {
    Rgb,
    Yuv444,
    /// Chroma planes at half resolution both axes.
    Yuv420,
}

/// One image plus the colorimetric state of its samples. Planes are stored
/// separately so 4:2:0 chroma keeps its native resolution; [`Frame::pixels`]
/// assembles an interleaved tensor for full-resolution formats.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub planes: [Tensor<f32>; 3],
    pub gamut: Gamut,
    pub transfer: Transfer,
    pub chroma: ChromaFormat,
    pub bit_depth: u8,
}

impl Frame {
    pub fn from_pixels(
        pixels: &Tensor<f32>,
        gamut: Gamut,
        transfer: Transfer,
        chroma: ChromaFormat,
        bit_depth: u8,
    ) -> Result<Frame> {
        let [n, c, h, w] = pixels.shape();
        if n != 1 || c != 3 {
            return Err(Error::shape(
                "Frame::from_pixels",
                format!("expected [1, 3, h, w], got {:?}", pixels.shape()),
            ));
        }
        if chroma == ChromaFormat::Yuv420 {
            return Err(Error::arg(
                "Frame::from_pixels",
                "4:2:0 frames carry separate plane sizes; build planes directly",
            ));
        }
        let take = |ch: usize| {
            Tensor::from_plane(h, w, pixels.plane(0, ch).to_vec()).expect("plane size")
        };
        let f = Frame {
            planes: [take(0), take(1), take(2)],
            gamut,
            transfer,
            chroma,
            bit_depth,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn from_planes(
        planes: [Tensor<f32>; 3],
        gamut: Gamut,
        transfer: Transfer,
        chroma: ChromaFormat,
        bit_depth: u8,
    ) -> Result<Frame> {
        let f = Frame {
            planes,
            gamut,
            transfer,
            chroma,
            bit_depth,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn width(&self) -> usize {
        self.planes[0].w()
    }

    pub fn height(&self) -> usize {
        self.planes[0].h()
    }

    pub fn validate(&self) -> Result<()> {
        if !valid_bit_depth(self.bit_depth) {
            return Err(Error::arg(
                "Frame",
                format!("bit depth {} not one of 8/10/16", self.bit_depth),
            ));
        }
        let (h, w) = (self.height(), self.width());
        let (ch, cw) = match self.chroma {
            ChromaFormat::Yuv420 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::arg(
                        "Frame",
                        format!("4:2:0 needs even dims, got {h}x{w}"),
                    ));
                }
                (h / 2, w / 2)
            }
            _ => (h, w),
        };
        for (i, p) in self.planes.iter().enumerate() {
            let want = if i == 0 { (h, w) } else { (ch, cw) };
            if (p.h(), p.w()) != want || p.n() != 1 || p.c() != 1 {
                return Err(Error::shape(
                    "Frame",
                    format!("plane {i} is {:?}, want [1, 1, {}, {}]", p.shape(), want.0, want.1),
                ));
            }
        }
        Ok(())
    }

    /// Interleave planes into `[1, 3, h, w]`. Errors for 4:2:0, whose chroma
    /// planes are smaller; upsample first.
    pub fn pixels(&self) -> Result<Tensor<f32>> {
        if self.chroma == ChromaFormat::Yuv420 {
            return Err(Error::arg(
                "Frame::pixels",
                "chroma is 4:2:0; upsample to 4:4:4 before requesting full pixels",
            ));
        }
        let (h, w) = (self.height(), self.width());
        let mut data = Vec::with_capacity(3 * h * w);
        for p in &self.planes {
            data.extend_from_slice(p.data());
        }
        Tensor::from_vec([1, 3, h, w], data)
    }
}

/// Apply a scalar map to every sample of a tensor, in f64.
pub fn map_values(t: &Tensor<f32>, f: impl Fn(f64) -> f64) -> Tensor<f32> {
    t.map(|v| f(v as f64) as f32)
}

/// Apply a per-pixel color map to a `[n, 3, h, w]` tensor.
pub fn map_rgb(t: &Tensor<f32>, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Tensor<f32>> {
    let [n, c, h, w] = t.shape();
    if c != 3 {
        return Err(Error::shape(
            "map_rgb",
            format!("need 3 channels, got {c}"),
        ));
    }
    let mut out = Tensor::zeros(t.shape());
    let hw = h * w;
    for s in 0..n {
        for i in 0..hw {
            let px = f([
                t.plane(s, 0)[i] as f64,
                t.plane(s, 1)[i] as f64,
                t.plane(s, 2)[i] as f64,
            ]);
            out.plane_mut(s, 0)[i] = px[0] as f32;
            out.plane_mut(s, 1)[i] = px[1] as f32;
            out.plane_mut(s, 2)[i] = px[2] as f32;
        }
    }
    Ok(out)
}

pub fn convert_gamut_image(t: &Tensor<f32>, from: Gamut, to: Gamut) -> Result<Tensor<f32>> {
    map_rgb(t, |px| convert_gamut(px, from, to))
}

pub fn rgb_to_yuv_image(t: &Tensor<f32>, g: Gamut) -> Result<Tensor<f32>> {
    map_rgb(t, |px| rgb_to_yuv(px, g))
}

pub fn yuv_to_rgb_image(t: &Tensor<f32>, g: Gamut) -> Result<Tensor<f32>> {
    map_rgb(t, |px| yuv_to_rgb(px, g))
}

pub fn rgb_to_lab_image(t: &Tensor<f32>, g: Gamut) -> Result<Tensor<f32>> {
    map_rgb(t, |px| rgb_to_lab(px, g))
}

pub fn tone_map_image(t: &Tensor<f32>, knee: f64) -> Result<Tensor<f32>> {
    map_rgb(t, |px| tone_map_forward(px, knee))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_pixels_roundtrip() {
        let px = Tensor::from_vec([1, 3, 2, 2], (0..12).map(|i| i as f32 / 12.0).collect())
            .unwrap();
        let f = Frame::from_pixels(&px, Gamut::Bt709, Transfer::GammaSdr, ChromaFormat::Yuv444, 8)
            .unwrap();
        assert_eq!(f.pixels().unwrap(), px);
        assert_eq!(f.width(), 2);
        assert_eq!(f.height(), 2);
    }

    #[test]
    fn frame_420_rejects_interleave() {
        let y = Tensor::zeros([1, 1, 4, 4]);
        let u = Tensor::zeros([1, 1, 2, 2]);
        let v = Tensor::zeros([1, 1, 2, 2]);
        let f = Frame::from_planes([y, u, v], Gamut::Bt2020, Transfer::Pq, ChromaFormat::Yuv420, 10)
            .unwrap();
        assert!(f.pixels().is_err());
    }

    #[test]
    fn frame_rejects_inconsistent_planes() {
        let y = Tensor::zeros([1, 1, 4, 4]);
        let u = Tensor::zeros([1, 1, 4, 4]);
        let v = Tensor::zeros([1, 1, 2, 2]);
        assert!(Frame::from_planes(
            [y, u, v],
            Gamut::Bt709,
            Transfer::GammaSdr,
            ChromaFormat::Yuv444,
            8
        )
        .is_err());
    }

    #[test]
    fn encoded_roundtrip_rms_small() {
        // gamma + yuv + gamut + 16-bit quantize, decode back, compare
        let mut s = 0.481f64;
        let mut next = || {
            s = (s * 9301.0 + 49297.0) % 233280.0;
            (s / 233280.0) as f32
        };
        let rgb = Tensor::from_vec([1, 3, 8, 8], (0..192).map(|_| next() * 0.8).collect())
            .unwrap();
        let enc = map_values(&rgb_to_yuv_image(&map_values(&rgb, gamma_oetf), Gamut::Bt709)
            .unwrap(), |x| {
            dequantize(quantize(x, 16), 16)
        });
        let dec = map_values(
            &yuv_to_rgb_image(&enc, Gamut::Bt709).unwrap(),
            gamma_eotf,
        );
        let rms = (rgb
            .data()
            .iter()
            .zip(dec.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / rgb.len() as f64)
            .sqrt();
        assert!(rms < 1e-5, "roundtrip rms {rms}");
    }
}
