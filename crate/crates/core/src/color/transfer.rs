//! Scalar transfer functions (opto-electronic and inverse) plus code-value
//! quantization. All math is f64; callers convert at the edges.

/// Piecewise SDR OETF: linear toe 4.5x below 0.018, else 1.099*x^0.45-0.099.
/// Input clamped to [0, 1].
pub fn gamma_oetf(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x < 0.018 {
        4.5 * x
    } else {
        1.099 * x.powf(0.45) - 0.099
    }
}

/// Exact inverse of [`gamma_oetf`].
pub fn gamma_eotf(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v < 0.081 {
        v / 4.5
    } else {
        ((v + 0.099) / 1.099).powf(1.0 / 0.45)
    }
}

/// Pure power-law OETF, sensitivity-test alternative to [`gamma_oetf`].
pub fn power_oetf(x: f64, gamma: f64) -> f64 {
    x.clamp(0.0, 1.0).powf(1.0 / gamma)
}

pub fn power_eotf(v: f64, gamma: f64) -> f64 {
    v.clamp(0.0, 1.0).powf(gamma)
}

const PQ_M1: f64 = 2610.0 / 16384.0;
const PQ_M2: f64 = 2523.0 / 4096.0 * 128.0;
const PQ_C1: f64 = 3424.0 / 4096.0;
const PQ_C2: f64 = 2413.0 / 4096.0 * 32.0;
const PQ_C3: f64 = 2392.0 / 4096.0 * 32.0;

/// Perceptual quantizer OETF over normalized absolute luminance
/// (1.0 = 10000 nits). Exact zero maps to zero; the raw closed form would
/// give c1^m2 ~ 7.3e-7, which the exact inverse collapses to zero anyway.
pub fn pq_oetf(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x == 0.0 {
        return 0.0;
    }
    let xp = x.powf(PQ_M1);
    ((PQ_C1 + PQ_C2 * xp) / (1.0 + PQ_C3 * xp)).powf(PQ_M2)
}

/// Exact inverse of [`pq_oetf`].
pub fn pq_eotf(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    let t = v.powf(1.0 / PQ_M2);
    let num = (t - PQ_C1).max(0.0);
    let den = PQ_C2 - PQ_C3 * t;
    if den <= 0.0 {
        return 1.0;
    }
    (num / den).powf(1.0 / PQ_M1)
}

pub fn valid_bit_depth(bits: u8) -> bool {
    matches!(bits, 8 | 10 | 16)
}

pub fn max_code(bits: u8) -> u16 {
    ((1u32 << bits) - 1) as u16
}

/// Full-range quantization: round(x * (2^bits - 1)), half away from zero
/// rounds up, clamped to the code range.
pub fn quantize(x: f64, bits: u8) -> u16 {
    let m = max_code(bits) as f64;
    (x * m + 0.5).floor().clamp(0.0, m) as u16
}

pub fn dequantize(v: u16, bits: u8) -> f64 {
    let m = max_code(bits);
    (v.min(m) as f64) / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_endpoints_and_toe() {
        assert_eq!(gamma_oetf(0.0), 0.0);
        assert!((gamma_oetf(1.0) - 1.0).abs() < 1e-12);
        assert!((gamma_oetf(0.01) - 0.045).abs() < 1e-12);
        assert_eq!(gamma_eotf(0.0), 0.0);
        assert!((gamma_eotf(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_roundtrip_grid() {
        for i in 0..=10_000 {
            let x = i as f64 / 10_000.0;
            let err = (gamma_eotf(gamma_oetf(x)) - x).abs();
            assert!(err < 1e-6, "x={x} err={err}");
        }
    }

    #[test]
    fn pq_endpoints_and_100nit_code() {
        assert_eq!(pq_oetf(0.0), 0.0);
        assert!((pq_oetf(1.0) - 1.0).abs() < 1e-12);
        // 100 nits normalized = 0.01
        assert!((pq_oetf(0.01) - 0.508078421517399).abs() < 1e-9);
    }

    #[test]
    fn pq_monotone_and_roundtrip_grid() {
        let mut prev = -1.0;
        for i in 0..=10_000 {
            let x = i as f64 / 10_000.0;
            let v = pq_oetf(x);
            assert!(v >= prev, "not monotone at {x}");
            prev = v;
            let err = (pq_eotf(v) - x).abs();
            assert!(err < 1e-6, "x={x} err={err}");
        }
    }

    #[test]
    fn closed_form_inverses_match_bisection() {
        let bisect = |f: &dyn Fn(f64) -> f64, target: f64| {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        for i in 1..50 {
            let v = i as f64 / 50.0;
            let x1 = pq_eotf(v);
            let x2 = bisect(&|x| pq_oetf(x), v);
            assert!((x1 - x2).abs() < 1e-7, "pq {v}: {x1} vs {x2}");
            let g1 = gamma_eotf(v);
            let g2 = bisect(&|x| gamma_oetf(x), v);
            assert!((g1 - g2).abs() < 1e-7, "gamma {v}: {g1} vs {g2}");
        }
    }

    #[test]
    fn power_curve_roundtrip() {
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!((power_eotf(power_oetf(x, 2.2), 2.2) - x).abs() < 1e-9);
        }
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(1.0, 10), 1023);
        assert_eq!(quantize(0.5, 8), 128); // round half up
        assert_eq!(quantize(0.0, 8), 0);
        assert_eq!(max_code(16), 65535);
        for i in 0..=255u16 {
            let x = dequantize(i, 8);
            assert_eq!(quantize(x, 8), i);
        }
        // half-step bound
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let err = (dequantize(quantize(x, 8), 8) - x).abs();
            assert!(err <= 1.0 / 510.0 + 1e-12, "x={x} err={err}");
        }
    }
}
