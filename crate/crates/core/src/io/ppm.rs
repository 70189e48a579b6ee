//! 16-bit binary PPM (P6, maxval 65535) writer for visual dumps. Per the
//! PPM specification, multi-byte samples are big-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Write an RGB `[1,3,h,w]` tensor with values in [0,1] as 16-bit PPM.
/// Out-of-range values clamp.
pub fn write_ppm16(rgb: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let p = path.as_ref();
    let [n, c, h, w] = rgb.shape();
    if n != 1 || c != 3 {
        return Err(Error::shape(
            "write_ppm16",
            format!("expected [1,3,h,w], got {:?}", rgb.shape()),
        ));
    }
    let mut out = format!("P6\n{w} {h}\n65535\n").into_bytes();
    out.reserve(h * w * 6);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = rgb.at(0, ch, y, x).clamp(0.0, 1.0) as f64;
                let code = (v * 65535.0).round() as u16;
                out.extend_from_slice(&code.to_be_bytes());
            }
        }
    }
    fs::write(p, out).map_err(|e| Error::io(p.display().to_string(), e))
}
