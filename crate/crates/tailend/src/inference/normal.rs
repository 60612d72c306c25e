//! Standard-normal distribution functions: density, CDF via a rational
//! erf/erfc approximation, and the quantile (inverse CDF).
//!
//! The quantile is a rational initial guess polished by one Newton step
//! against the CDF, which lands it well inside 1e-8 of the true value —
//! far tighter than the 1e-5 the confidence-bound code needs.

// The coefficients keep every digit of their published form, one or two
// past what f64 resolves.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Rational-approximation coefficients for erf on |x| <= 0.46875.
const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_56e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_47e3,
    1.857_777_061_846_031_53e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_09e1,
    2.440_246_379_344_441_73e2,
    1.282_616_526_077_372_28e3,
    2.844_236_833_439_170_62e3,
];

/// Coefficients for erfc on 0.46875 < |x| <= 4.
const ERFC_C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_375_94e0,
    6.611_919_063_714_162_95e1,
    2.986_351_381_974_001_31e2,
    8.819_522_212_417_690_9e2,
    1.712_047_612_634_070_58e3,
    2.051_078_377_826_071_47e3,
    1.230_339_354_797_997_25e3,
    2.153_115_354_744_038_46e-8,
];
const ERFC_D: [f64; 8] = [
    1.574_492_611_070_983_47e1,
    1.176_939_508_913_124_99e2,
    5.371_811_018_620_098_58e2,
    1.621_389_574_566_690_19e3,
    3.290_799_235_733_459_63e3,
    4.362_619_090_143_247_16e3,
    3.439_367_674_143_721_64e3,
    1.230_339_354_803_749_42e3,
];

/// Coefficients for erfc on |x| > 4 (asymptotic region).
const ERFC_P: [f64; 6] = [
    3.053_266_349_612_323_44e-1,
    3.603_448_999_498_044_39e-1,
    1.257_817_261_112_292_46e-1,
    1.608_378_514_874_227_66e-2,
    6.587_491_615_298_378_03e-4,
    1.631_538_713_730_209_78e-2,
];
const ERFC_Q: [f64; 5] = [
    2.568_520_192_289_822_42e0,
    1.872_952_849_923_460_47e0,
    5.279_051_029_514_284_12e-1,
    6.051_834_131_244_131_91e-2,
    2.335_204_976_268_691_85e-3,
];

/// erf on the central interval, |x| <= 0.46875.
fn erf_small(x: f64) -> f64 {
    let z = x * x;
    let mut num = ERF_A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + ERF_A[i]) * z;
        den = (den + ERF_B[i]) * z;
    }
    x * (num + ERF_A[3]) / (den + ERF_B[3])
}

/// erfc for x > 0.46875; the two outer rational regions.
fn erfc_core(x: f64) -> f64 {
    debug_assert!(x > 0.46875);
    if x <= 4.0 {
        let mut num = ERFC_C[8] * x;
        let mut den = x;
        for i in 0..7 {
            num = (num + ERFC_C[i]) * x;
            den = (den + ERFC_D[i]) * x;
        }
        let ratio = (num + ERFC_C[7]) / (den + ERFC_D[7]);
        // exp(-x²) split to keep the argument's rounding error small:
        // ysq is x truncated to 1/16ths, so ysq² is nearly exact and the
        // correction factor's argument is tiny.
        let ysq = (x * 16.0).trunc() / 16.0;
        let del = (x - ysq) * (x + ysq);
        (-ysq * ysq).exp() * (-del).exp() * ratio
    } else if x < 26.6 {
        let z = 1.0 / (x * x);
        let mut num = ERFC_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERFC_P[i]) * z;
            den = (den + ERFC_Q[i]) * z;
        }
        let r = z * (num + ERFC_P[4]) / (den + ERFC_Q[4]);
        let ysq = (x * 16.0).trunc() / 16.0;
        let del = (x - ysq) * (x + ysq);
        // 1/sqrt(pi) = 0.5641895835477563
        (-ysq * ysq).exp() * (-del).exp() * (0.564_189_583_547_756_3 - r) / x
    } else {
        // erfc underflows past ~26.5; the CDF consumer never gets here.
        0.0
    }
}

/// The error function, accurate to a few ulps over the whole line.
pub fn erf(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 0.46875 {
        erf_small(x)
    } else {
        let tail = erfc_core(ax);
        if x > 0.0 {
            1.0 - tail
        } else {
            tail - 1.0
        }
    }
}

/// The complementary error function, keeping full relative accuracy in
/// the right tail where `1 - erf(x)` would cancel.
pub fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 0.46875 {
        1.0 - erf_small(x)
    } else if x > 0.0 {
        erfc_core(ax)
    } else {
        2.0 - erfc_core(ax)
    }
}

/// Standard normal density φ(x).
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF Φ(x), via erfc so both tails keep relative
/// accuracy.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Rational lower-region/central coefficients for the quantile's initial
/// guess (relative error below 1.15e-9 before refinement).
const INV_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_690e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239e0,
];
const INV_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const INV_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838e0,
    -2.549_732_539_343_734e0,
    4.374_664_141_464_968e0,
    2.938_163_982_698_783e0,
];
const INV_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996e0,
    3.754_408_661_907_416e0,
];

fn quantile_guess(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((INV_C[0] * q + INV_C[1]) * q + INV_C[2]) * q + INV_C[3]) * q + INV_C[4]) * q
            + INV_C[5])
            / ((((INV_D[0] * q + INV_D[1]) * q + INV_D[2]) * q + INV_D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((INV_A[0] * r + INV_A[1]) * r + INV_A[2]) * r + INV_A[3]) * r + INV_A[4]) * r
            + INV_A[5])
            * q
            / (((((INV_B[0] * r + INV_B[1]) * r + INV_B[2]) * r + INV_B[3]) * r + INV_B[4]) * r
                + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((INV_C[0] * q + INV_C[1]) * q + INV_C[2]) * q + INV_C[3]) * q + INV_C[4]) * q
            + INV_C[5])
            / ((((INV_D[0] * q + INV_D[1]) * q + INV_D[2]) * q + INV_D[3]) * q + 1.0))
    }
}

/// The standard normal quantile z_p: the x with Φ(x) = p.
///
/// Errors unless 0 < p < 1. Accuracy is a few parts in 1e-13 over
/// (1e-300, 1 − 1e-12); `normal_quantile(0.5)` is exactly 0.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(Error::invalid(format!(
            "quantile level must lie strictly between 0 and 1, got {p}"
        )));
    }
    let x = quantile_guess(p);
    // One Newton step: x ← x − (Φ(x) − p)/φ(x). The guess is within
    // ~1e-9 relative, so a single step more than squares that away.
    let pdf = normal_pdf(x);
    if pdf > 0.0 {
        Ok(x - (normal_cdf(x) - p) / pdf)
    } else {
        Ok(x)
    }
}
