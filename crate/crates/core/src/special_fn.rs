//! Gamma function and cancellation-free power differences.

// reference digits are kept as published
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};
use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) for x > 0 (Lanczos, g = 7, nine terms; reflection below 1/2).
pub fn gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("gamma requires x > 0, got {x}")));
    }
    Ok(gamma_unchecked(x))
}

pub(crate) fn gamma_unchecked(x: f64) -> f64 {
    if x.fract() == 0.0 && x <= 23.0 {
        // (x−1)! is exactly representable up to here
        return (1..x as u32).fold(1.0, |acc, k| acc * k as f64);
    }
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma_unchecked(1.0 - x));
    }
    let z = x - 1.0;
    let mut sum = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let w = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * w.powf(z + 0.5) * (-w).exp() * sum
}

/// `a^s − b^s` for `a ≥ b ≥ 0`, `s ∈ (0,1)`, accurate when `b` is close to `a`.
pub fn pow_diff(a: f64, b: f64, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("pow_diff exponent must lie in (0,1), got {s}")));
    }
    if !(b >= 0.0) || !(a >= b) || !a.is_finite() {
        return Err(Error::Domain(format!("pow_diff requires a >= b >= 0, got a={a}, b={b}")));
    }
    Ok(pow_diff_gap(a, a - b, s))
}

/// `a^s − (a − gap)^s` with the gap supplied directly, so that a gap known to
/// full relative precision (a mesh width, say) is not rebuilt by subtraction.
pub(crate) fn pow_diff_gap(a: f64, gap: f64, s: f64) -> f64 {
    if gap <= 0.0 {
        return 0.0;
    }
    if gap >= a {
        return a.powf(s);
    }
    if gap < 1e-3 * a {
        // a^s (1 − (1 − gap/a)^s)
        -a.powf(s) * (s * (-gap / a).ln_1p()).exp_m1()
    } else {
        a.powf(s) - (a - gap).powf(s)
    }
}
