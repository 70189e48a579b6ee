//! Gamut primaries, RGB<->XYZ/YUV/Lab conversions. Matrices are derived
//! from chromaticity coordinates at startup rather than hard-coded, so the
//! white-preservation and inverse properties hold by construction.

use std::sync::OnceLock;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gamut {
    Bt709,
    Bt2020,
}

pub type Mat3 = [[f64; 3]; 3];

/// (x, y) chromaticities: R, G, B primaries.
fn primaries(g: Gamut) -> [[f64; 2]; 3] {
    match g {
        Gamut::Bt709 => [[0.64, 0.33], [0.30, 0.60], [0.15, 0.06]],
        Gamut::Bt2020 => [[0.708, 0.292], [0.170, 0.797], [0.131, 0.046]],
    }
}

const D65: [f64; 2] = [0.3127, 0.3290];

fn xy_to_xyz(x: f64, y: f64) -> [f64; 3] {
    [x / y, 1.0, (1.0 - x - y) / y]
}

pub fn mat_mul_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, row) in b.iter().enumerate() {
                out[i][j] += a[i][k] * row[j];
            }
        }
    }
    out
}

pub fn mat_inv(m: &Mat3) -> Mat3 {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    out
}

/// RGB -> XYZ for the given primaries, scaled so (1,1,1) hits D65 white.
pub fn rgb_to_xyz_matrix(g: Gamut) -> Mat3 {
    let p = primaries(g);
    let cols = [
        xy_to_xyz(p[0][0], p[0][1]),
        xy_to_xyz(p[1][0], p[1][1]),
        xy_to_xyz(p[2][0], p[2][1]),
    ];
    let mut m = [[0.0; 3]; 3];
    for (r, row) in m.iter_mut().enumerate() {
        for c in 0..3 {
            row[c] = cols[c][r];
        }
    }
    let s = mat_mul_vec(&mat_inv(&m), white_point_xyz());
    for row in &mut m {
        for c in 0..3 {
            row[c] *= s[c];
        }
    }
    m
}

pub fn white_point_xyz() -> [f64; 3] {
    xy_to_xyz(D65[0], D65[1])
}

fn cached_gamut_matrices() -> &'static (Mat3, Mat3) {
    static M: OnceLock<(Mat3, Mat3)> = OnceLock::new();
    M.get_or_init(|| {
        let to_2020 = mat_mul(
            &mat_inv(&rgb_to_xyz_matrix(Gamut::Bt2020)),
            &rgb_to_xyz_matrix(Gamut::Bt709),
        );
        (to_2020, mat_inv(&to_2020))
    })
}

/// Linear-light conversion matrix between the two gamuts; identity when
/// `from == to`. The reverse direction can produce out-of-gamut negatives,
/// which are passed through unclamped.
pub fn gamut_matrix(from: Gamut, to: Gamut) -> Mat3 {
    match (from, to) {
        (Gamut::Bt709, Gamut::Bt2020) => cached_gamut_matrices().0,
        (Gamut::Bt2020, Gamut::Bt709) => cached_gamut_matrices().1,
        _ => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    }
}

pub fn convert_gamut(rgb: [f64; 3], from: Gamut, to: Gamut) -> [f64; 3] {
    if from == to {
        return rgb;
    }
    mat_mul_vec(&gamut_matrix(from, to), rgb)
}

/// Luma coefficients (Kr, Kb).
pub fn yuv_coeffs(g: Gamut) -> (f64, f64) {
    match g {
        Gamut::Bt709 => (0.2126, 0.0722),
        Gamut::Bt2020 => (0.2627, 0.0593),
    }
}

/// Encoded RGB in [0,1] -> full-range YUV in [0,1] (chroma offset 0.5).
pub fn rgb_to_yuv(rgb: [f64; 3], g: Gamut) -> [f64; 3] {
    let (kr, kb) = yuv_coeffs(g);
    let [r, gg, b] = rgb;
    let y = kr * r + (1.0 - kr - kb) * gg + kb * b;
    let u = (b - y) / (2.0 * (1.0 - kb)) + 0.5;
    let v = (r - y) / (2.0 * (1.0 - kr)) + 0.5;
    [y, u, v]
}

/// Exact inverse of [`rgb_to_yuv`].
pub fn yuv_to_rgb(yuv: [f64; 3], g: Gamut) -> [f64; 3] {
    let (kr, kb) = yuv_coeffs(g);
    let kg = 1.0 - kr - kb;
    let [y, u, v] = yuv;
    let b = y + (u - 0.5) * 2.0 * (1.0 - kb);
    let r = y + (v - 0.5) * 2.0 * (1.0 - kr);
    let gg = (y - kr * r - kb * b) / kg;
    [r, gg, b]
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Linear-light RGB (given gamut) -> CIE L*a*b* with D65 reference white.
pub fn rgb_to_lab(rgb_linear: [f64; 3], g: Gamut) -> [f64; 3] {
    let m = match g {
        Gamut::Bt709 => {
            static M709: OnceLock<Mat3> = OnceLock::new();
            *M709.get_or_init(|| rgb_to_xyz_matrix(Gamut::Bt709))
        }
        Gamut::Bt2020 => {
            static M2020: OnceLock<Mat3> = OnceLock::new();
            *M2020.get_or_init(|| rgb_to_xyz_matrix(Gamut::Bt2020))
        }
    };
    let xyz = mat_mul_vec(&m, rgb_linear);
    let wn = white_point_xyz();
    let fx = lab_f(xyz[0] / wn[0]);
    let fy = lab_f(xyz[1] / wn[1]);
    let fz = lab_f(xyz[2] / wn[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Frame-level gamut check used by metrics and io.
pub fn gamut_tag(v: u8) -> Result<Gamut> {
    match v {
        0 => Ok(Gamut::Bt709),
        1 => Ok(Gamut::Bt2020),
        _ => Err(Error::arg("gamut_tag", format!("unknown gamut tag {v}"))),
    }
}
