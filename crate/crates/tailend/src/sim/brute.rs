//! Deliberately naive reference implementations of the heterogeneity
//! functionals: double loops over ordered pairs, transcribed straight
//! from the definitions. They exist to pin down the fast counting code
//! — every threshold comparison is spelled with the same floating-point
//! expressions, so agreement is expected to be exact, not approximate.

use crate::ingest::SpeedSample;

/// R̂(x,y) by enumerating every ordered pair within every athlete.
pub fn r_naive(sample: &SpeedSample, ranks: &[usize], k: usize, x: f64, y: f64) -> f64 {
    assert_eq!(ranks.len(), sample.n());
    let n = sample.n() as f64;
    let kf = k as f64;
    let tx = n - kf * x;
    let ty = n - kf * y;
    let mut sum = 0.0;
    for l in 0..sample.p() {
        let off = sample.group_offsets()[l];
        let m = sample.group_sizes()[l];
        let group = &ranks[off..off + m];
        let mut pairs = 0usize;
        for j1 in 0..m {
            for j2 in 0..m {
                if j1 != j2 && group[j1] as f64 > tx && group[j2] as f64 > ty {
                    pairs += 1;
                }
            }
        }
        sum += pairs as f64 / (m - 1) as f64;
    }
    sum / kf
}

/// λ̂(u) by the same double loop, through the identity λ̂(u) = R̂(1, 1/u).
pub fn lambda_naive(sample: &SpeedSample, ranks: &[usize], k: usize, u: f64) -> f64 {
    r_naive(sample, ranks, k, 1.0, 1.0 / u)
}

/// m_λ̂(x) = (1+x)∫₀¹ uˣ λ̂(u) du by a midpoint Riemann sum with `cells`
/// subintervals — slow and approximate, for cross-checking the exact
/// breakpoint integration.
pub fn m_lambda_riemann(
    sample: &SpeedSample,
    ranks: &[usize],
    k: usize,
    x: f64,
    cells: usize,
) -> f64 {
    let est = crate::heterogeneity::LambdaEstimator::new(sample, ranks, k).unwrap();
    let h = 1.0 / cells as f64;
    let mut acc = 0.0;
    for i in 0..cells {
        let u = (i as f64 + 0.5) * h;
        acc += u.powf(x) * est.lambda_at(u);
    }
    (1.0 + x) * acc * h
}
