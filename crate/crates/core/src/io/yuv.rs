//! Planar YUV container with a self-describing header, plus chroma
//! resampling between 4:4:4 and 4:2:0.
//!
//! Layout, all little-endian: magic "GPYV", version u32, width u32,
//! height u32, bit_depth u8 (8|10), chroma u8 (0=444, 1=420), gamut u8
//! (0=709, 1=2020), transfer u8 (0=gamma, 1=pq), frame_count u32, then
//! frame_count frames of planar Y,U,V samples. 10-bit samples sit in
//! little-endian 16-bit containers with values 0..1023.

use std::fs;
use std::path::Path;

use crate::color::{
    dequantize, gamut_tag, quantize, ChromaFormat, Frame, Gamut, Transfer,
};
use crate::error::{Error, Result};
use crate::tensor::{avg_pool, Tensor};

pub const YUV_MAGIC: [u8; 4] = *b"GPYV";
pub const YUV_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YuvFileHeader {
    pub width: u32,
    pub height: u32,
    pub bit_depth: u8,
    pub chroma: ChromaFormat,
    pub gamut: Gamut,
    pub transfer: Transfer,
    pub frame_count: u32,
}

fn chroma_tag(v: u8, path: &str) -> Result<ChromaFormat> {
    match v {
        0 => Ok(ChromaFormat::Yuv444),
        1 => Ok(ChromaFormat::Yuv420),
        _ => Err(Error::file(path, format!("unknown chroma tag {v}"))),
    }
}

fn transfer_tag(v: u8, path: &str) -> Result<Transfer> {
    match v {
        0 => Ok(Transfer::GammaSdr),
        1 => Ok(Transfer::Pq),
        _ => Err(Error::file(path, format!("unknown transfer tag {v}"))),
    }
}

impl YuvFileHeader {
    pub fn from_frame(frame: &Frame, frame_count: u32) -> Result<YuvFileHeader> {
        frame.validate()?;
        if frame.chroma == ChromaFormat::Rgb {
            return Err(Error::arg(
                "write_yuv",
                "container stores YUV planes; convert RGB frames first",
            ));
        }
        if frame.bit_depth != 8 && frame.bit_depth != 10 {
            return Err(Error::arg(
                "write_yuv",
                format!("container supports 8 or 10 bits, frame has {}", frame.bit_depth),
            ));
        }
        if frame.transfer == Transfer::Linear {
            return Err(Error::arg(
                "write_yuv",
                "linear-light frames have no transfer tag; encode first",
            ));
        }
        Ok(YuvFileHeader {
            width: frame.width() as u32,
            height: frame.height() as u32,
            bit_depth: frame.bit_depth,
            chroma: frame.chroma,
            gamut: frame.gamut,
            transfer: frame.transfer,
            frame_count,
        })
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(&YUV_MAGIC);
        out.extend_from_slice(&YUV_VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.bit_depth);
        out.push(match self.chroma {
            ChromaFormat::Yuv444 => 0,
            ChromaFormat::Yuv420 => 1,
            ChromaFormat::Rgb => unreachable!("rejected in from_frame"),
        });
        out.push(match self.gamut {
            Gamut::Bt709 => 0,
            Gamut::Bt2020 => 1,
        });
        out.push(match self.transfer {
            Transfer::GammaSdr => 0,
            Transfer::Pq => 1,
            Transfer::Linear => unreachable!("rejected in from_frame"),
        });
        out.extend_from_slice(&self.frame_count.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8], path: &str) -> Result<YuvFileHeader> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::file(path, "file shorter than header"));
        }
        if bytes[0..4] != YUV_MAGIC {
            return Err(Error::file(path, "bad magic, not a GPYV file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != YUV_VERSION {
            return Err(Error::file(path, format!("unsupported version {version}")));
        }
        let width = u32_at(8);
        let height = u32_at(12);
        let bit_depth = bytes[16];
        if bit_depth != 8 && bit_depth != 10 {
            return Err(Error::file(path, format!("bit depth {bit_depth} not 8 or 10")));
        }
        let chroma = chroma_tag(bytes[17], path)?;
        let gamut = gamut_tag(bytes[18])
            .map_err(|_| Error::file(path, format!("unknown gamut tag {}", bytes[18])))?;
        let transfer = transfer_tag(bytes[19], path)?;
        if width == 0 || height == 0 {
            return Err(Error::file(path, "zero dimensions"));
        }
        if width > 1 << 16 || height > 1 << 16 {
            return Err(Error::file(path, format!("dimensions {width}x{height} overflow")));
        }
        if chroma == ChromaFormat::Yuv420 && (width % 2 != 0 || height % 2 != 0) {
            return Err(Error::file(path, format!("4:2:0 with odd dims {width}x{height}")));
        }
        Ok(YuvFileHeader {
            width,
            height,
            bit_depth,
            chroma,
            gamut,
            transfer,
            frame_count: u32_at(20),
        })
    }

    /// Samples per frame: full-size luma plus two chroma planes.
    pub fn samples_per_frame(&self) -> usize {
        let luma = self.width as usize * self.height as usize;
        let chroma = match self.chroma {
            ChromaFormat::Yuv420 => luma / 4,
            _ => luma,
        };
        luma + 2 * chroma
    }

    fn bytes_per_sample(&self) -> usize {
        if self.bit_depth == 8 {
            1
        } else {
            2
        }
    }
}

/// Read only the header; used for manifest validation without paying for
/// the payload.
pub fn read_yuv_header(path: impl AsRef<Path>) -> Result<YuvFileHeader> {
    let p = path.as_ref();
    let name = p.display().to_string();
    let mut bytes = [0u8; HEADER_LEN];
    let mut file = fs::File::open(p).map_err(|e| Error::io(&name, e))?;
    std::io::Read::read_exact(&mut file, &mut bytes)
        .map_err(|_| Error::file(&name, "file shorter than header"))?;
    YuvFileHeader::decode(&bytes, &name)
}

/// Write frames to one container. All frames must share dimensions, bit
/// depth, chroma layout, gamut, and transfer.
pub fn write_yuv_frames(frames: &[Frame], path: impl AsRef<Path>) -> Result<()> {
    let p = path.as_ref();
    let name = p.display().to_string();
    if frames.is_empty() {
        return Err(Error::arg("write_yuv", "no frames to write"));
    }
    let header = YuvFileHeader::from_frame(&frames[0], frames.len() as u32)?;
    let mut out = header.encode();
    out.reserve(frames.len() * header.samples_per_frame() * header.bytes_per_sample());
    for frame in frames {
        let fh = YuvFileHeader::from_frame(frame, frames.len() as u32)?;
        if fh != header {
            return Err(Error::arg(
                "write_yuv",
                "all frames in a container must share one header",
            ));
        }
        for plane in &frame.planes {
            for &v in plane.data() {
                let code = quantize(v as f64, frame.bit_depth);
                if frame.bit_depth == 8 {
                    out.push(code as u8);
                } else {
                    out.extend_from_slice(&code.to_le_bytes());
                }
            }
        }
    }
    fs::write(p, out).map_err(|e| Error::io(&name, e))
}

pub fn write_yuv(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    write_yuv_frames(std::slice::from_ref(frame), path)
}

/// Read every frame in the container. Samples come back normalized to [0,1]
/// full range (code / max_code).
pub fn read_yuv_frames(path: impl AsRef<Path>) -> Result<Vec<Frame>> {
    let p = path.as_ref();
    let name = p.display().to_string();
    let bytes = fs::read(p).map_err(|e| Error::io(&name, e))?;
    let header = YuvFileHeader::decode(&bytes, &name)?;
    let per_frame = header.samples_per_frame() * header.bytes_per_sample();
    let expected = HEADER_LEN + per_frame * header.frame_count as usize;
    if bytes.len() != expected {
        return Err(Error::file(
            &name,
            format!("payload is {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let (w, h) = (header.width as usize, header.height as usize);
    let (cw, ch) = match header.chroma {
        ChromaFormat::Yuv420 => (w / 2, h / 2),
        _ => (w, h),
    };
    let mut frames = Vec::with_capacity(header.frame_count as usize);
    let mut offset = HEADER_LEN;
    for _ in 0..header.frame_count {
        let mut planes = Vec::with_capacity(3);
        for plane_idx in 0..3 {
            let (ph, pw) = if plane_idx == 0 { (h, w) } else { (ch, cw) };
            let count = ph * pw;
            let mut data = Vec::with_capacity(count);
            if header.bit_depth == 8 {
                for &b in &bytes[offset..offset + count] {
                    data.push(dequantize(b as u16, 8) as f32);
                }
                offset += count;
            } else {
                for i in 0..count {
                    let code =
                        u16::from_le_bytes([bytes[offset + 2 * i], bytes[offset + 2 * i + 1]]);
                    if code > 1023 {
                        return Err(Error::file(
                            &name,
                            format!("10-bit sample {code} out of range"),
                        ));
                    }
                    data.push(dequantize(code, 10) as f32);
                }
                offset += 2 * count;
            }
            planes.push(Tensor::from_plane(ph, pw, data)?);
        }
        let [y, u, v]: [Tensor<f32>; 3] = planes.try_into().unwrap();
        frames.push(Frame::from_planes(
            [y, u, v],
            header.gamut,
            header.transfer,
            header.chroma,
            header.bit_depth,
        )?);
    }
    Ok(frames)
}

/// Read a container expected to hold at least one frame; returns the first.
pub fn read_yuv(path: impl AsRef<Path>) -> Result<Frame> {
    let p = path.as_ref();
    let frames = read_yuv_frames(p)?;
    frames.into_iter().next().ok_or_else(|| {
        Error::file(p.display().to_string(), "container holds zero frames")
    })
}

/// Bilinear chroma upsample, co-sited convention: chroma sample (y,x) sits
/// on luma sample (2y,2x).
pub fn chroma_420_to_444(frame: &Frame) -> Result<Frame> {
    if frame.chroma != ChromaFormat::Yuv420 {
        return Err(Error::arg(
            "chroma_420_to_444",
            format!("expected a 4:2:0 frame, chroma is {:?}", frame.chroma),
        ));
    }
    let (h, w) = (frame.height(), frame.width());
    let up = |plane: &Tensor<f32>| -> Tensor<f32> {
        let (ch, cw) = (plane.h(), plane.w());
        let src = plane.data();
        let mut out = vec![0.0f32; h * w];
        for oy in 0..h {
            let sy = oy as f64 * 0.5;
            let y0 = sy.floor() as usize;
            let fy = sy - y0 as f64;
            let y1 = (y0 + 1).min(ch - 1);
            for ox in 0..w {
                let sx = ox as f64 * 0.5;
                let x0 = sx.floor() as usize;
                let fx = sx - x0 as f64;
                let x1 = (x0 + 1).min(cw - 1);
                let v = (1.0 - fy) * (1.0 - fx) * src[y0 * cw + x0] as f64
                    + (1.0 - fy) * fx * src[y0 * cw + x1] as f64
                    + fy * (1.0 - fx) * src[y1 * cw + x0] as f64
                    + fy * fx * src[y1 * cw + x1] as f64;
                out[oy * w + ox] = v as f32;
            }
        }
        Tensor::from_plane(h, w, out).expect("sized above")
    };
    Frame::from_planes(
        [frame.planes[0].clone(), up(&frame.planes[1]), up(&frame.planes[2])],
        frame.gamut,
        frame.transfer,
        ChromaFormat::Yuv444,
        frame.bit_depth,
    )
}

/// 2x2 mean chroma downsample. Dimensions must be even.
pub fn chroma_444_to_420(frame: &Frame) -> Result<Frame> {
    if frame.chroma != ChromaFormat::Yuv444 {
        return Err(Error::arg(
            "chroma_444_to_420",
            format!("expected a 4:4:4 frame, chroma is {:?}", frame.chroma),
        ));
    }
    let (h, w) = (frame.height(), frame.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::arg(
            "chroma_444_to_420",
            format!("odd dimensions {h}x{w} cannot subsample"),
        ));
    }
    let down = |plane: &Tensor<f32>| avg_pool(plane, 2, 2);
    Frame::from_planes(
        [
            frame.planes[0].clone(),
            down(&frame.planes[1])?,
            down(&frame.planes[2])?,
        ],
        frame.gamut,
        frame.transfer,
        ChromaFormat::Yuv420,
        frame.bit_depth,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("gpgmnet-yuv-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn random_frame(
        seed: u64,
        h: usize,
        w: usize,
        bit_depth: u8,
        chroma: ChromaFormat,
    ) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max = crate::color::max_code(bit_depth) as f64;
        let (ch, cw) = match chroma {
            ChromaFormat::Yuv420 => (h / 2, w / 2),
            _ => (h, w),
        };
        let mut plane = |ph: usize, pw: usize| {
            let data: Vec<f32> = (0..ph * pw)
                .map(|_| (rng.gen_range(0..=max as u32) as f64 / max) as f32)
                .collect();
            Tensor::from_plane(ph, pw, data).unwrap()
        };
        let y = plane(h, w);
        let u = plane(ch, cw);
        let v = plane(ch, cw);
        Frame::from_planes(
            [y, u, v],
            Gamut::Bt2020,
            Transfer::Pq,
            chroma,
            bit_depth,
        )
        .unwrap()
    }

    #[test]
    fn ten_bit_444_roundtrip_is_bit_exact() {
        let f = random_frame(1, 12, 10, 10, ChromaFormat::Yuv444);
        let path = tmp("rt444.yuv");
        write_yuv(&f, &path).unwrap();
        let g = read_yuv(&path).unwrap();
        assert_eq!(f, g);
        // a second write of the re-read frame produces identical bytes
        let path2 = tmp("rt444b.yuv");
        write_yuv(&g, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn eight_bit_420_roundtrip_and_plane_sizes() {
        let f = random_frame(2, 16, 16, 8, ChromaFormat::Yuv420);
        let path = tmp("rt420.yuv");
        write_yuv(&f, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // 256 luma + 64 + 64 chroma samples, one byte each, after the header
        assert_eq!(bytes.len(), 24 + 256 + 64 + 64);
        let g = read_yuv(&path).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn endpoint_code_maps_to_one() {
        let y = Tensor::from_plane(1, 2, vec![1.0, 0.0]).unwrap();
        let u = Tensor::from_plane(1, 2, vec![0.5, 0.5]).unwrap();
        let v = u.clone();
        let f = Frame::from_planes([y, u, v], Gamut::Bt709, Transfer::GammaSdr, ChromaFormat::Yuv444, 8).unwrap();
        let path = tmp("endpoint.yuv");
        write_yuv(&f, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes[24], 255);
        let g = read_yuv(&path).unwrap();
        assert_eq!(g.planes[0].data()[0], 1.0);
    }

    #[test]
    fn multi_frame_container_roundtrips() {
        let a = random_frame(3, 8, 6, 10, ChromaFormat::Yuv444);
        let b = random_frame(4, 8, 6, 10, ChromaFormat::Yuv444);
        let path = tmp("multi.yuv");
        write_yuv_frames(&[a.clone(), b.clone()], &path).unwrap();
        assert_eq!(read_yuv_header(&path).unwrap().frame_count, 2);
        let frames = read_yuv_frames(&path).unwrap();
        assert_eq!(frames, vec![a, b]);
    }

    #[test]
    fn malformed_files_give_structured_errors() {
        let f = random_frame(5, 8, 8, 10, ChromaFormat::Yuv444);
        let path = tmp("fuzz.yuv");
        write_yuv(&f, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        // bad magic
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_yuv(&path), Err(Error::MalformedFile { .. })));

        // truncations at every prefix length must error, never panic
        for cut in [0, 3, 10, 23, 24, 50, good.len() - 1] {
            std::fs::write(&path, &good[..cut]).unwrap();
            assert!(read_yuv(&path).is_err(), "cut {cut} accepted");
        }

        // trailing garbage
        let mut long = good.clone();
        long.push(0);
        std::fs::write(&path, &long).unwrap();
        assert!(read_yuv(&path).is_err());

        // out-of-range 10-bit sample
        let mut hot = good.clone();
        hot[25] = 0xff; // high byte 0xff -> sample > 1023
        std::fs::write(&path, &hot).unwrap();
        assert!(matches!(read_yuv(&path), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn rejects_linear_and_rgb_frames() {
        let f = random_frame(6, 4, 4, 10, ChromaFormat::Yuv444);
        let mut linear = f.clone();
        linear.transfer = Transfer::Linear;
        assert!(write_yuv(&linear, tmp("lin.yuv")).is_err());
        let mut rgb = f;
        rgb.chroma = ChromaFormat::Rgb;
        assert!(write_yuv(&rgb, tmp("rgb.yuv")).is_err());
    }

    #[test]
    fn constant_chroma_survives_resampling_exactly() {
        let y = Tensor::from_plane(8, 8, vec![0.25; 64]).unwrap();
        let u = Tensor::from_plane(8, 8, vec![0.625f32; 64]).unwrap();
        let v = Tensor::from_plane(8, 8, vec![0.375f32; 64]).unwrap();
        let f444 = Frame::from_planes([y, u, v], Gamut::Bt709, Transfer::GammaSdr, ChromaFormat::Yuv444, 8).unwrap();
        let f420 = chroma_444_to_420(&f444).unwrap();
        assert!(f420.planes[1].data().iter().all(|&x| x == 0.625));
        let back = chroma_420_to_444(&f420).unwrap();
        assert_eq!(back, f444);
    }

    #[test]
    fn resample_roundtrip_on_smooth_chroma_is_close() {
        let (h, w) = (32, 40);
        let y = Tensor::from_plane(h, w, vec![0.5; h * w]).unwrap();
        let smooth = |phase: f64| {
            let data: Vec<f32> = (0..h * w)
                .map(|i| {
                    let (yy, xx) = (i / w, i % w);
                    (0.5 + 0.3
                        * ((yy as f64 * 0.08 + phase).sin() * (xx as f64 * 0.06).cos()))
                        as f32
                })
                .collect();
            Tensor::from_plane(h, w, data).unwrap()
        };
        let f = Frame::from_planes(
            [y, smooth(0.0), smooth(1.0)],
            Gamut::Bt709,
            Transfer::GammaSdr,
            ChromaFormat::Yuv444,
            8,
        )
        .unwrap();
        let back = chroma_420_to_444(&chroma_444_to_420(&f).unwrap()).unwrap();
        for p in 1..3 {
            let a = f.planes[p].data();
            let b = back.planes[p].data();
            let rms = (a
                .iter()
                .zip(b.iter())
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum::<f64>()
                / a.len() as f64)
                .sqrt();
            assert!(rms < 1e-2, "plane {p} rms {rms}");
        }
    }

    #[test]
    fn downsample_rejects_odd_dims_and_wrong_tags() {
        let f = random_frame(7, 6, 6, 8, ChromaFormat::Yuv444);
        let mut odd_planes = f.clone();
        odd_planes.planes = [
            Tensor::from_plane(5, 6, vec![0.0; 30]).unwrap(),
            Tensor::from_plane(5, 6, vec![0.0; 30]).unwrap(),
            Tensor::from_plane(5, 6, vec![0.0; 30]).unwrap(),
        ];
        assert!(chroma_444_to_420(&odd_planes).is_err());
        let f420 = chroma_444_to_420(&f).unwrap();
        assert!(chroma_444_to_420(&f420).is_err());
        assert!(chroma_420_to_444(&f).is_err());
    }
}
