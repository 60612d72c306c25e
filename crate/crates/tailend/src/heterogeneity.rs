//! Tail-heterogeneity estimation from within-athlete co-exceedances.
//!
//! The central object is λ̂(u): for each athlete, count ordered pairs of
//! their observations where the first lands in the sample's top `k` and
//! the second exceeds the rank threshold `n − k/u`, normalize by
//! `m_ℓ − 1`, and average the per-athlete counts over `k`. Exchangeable
//! samples give λ̂ near its homogeneous expectation (≈ k/n, see
//! [`homogeneous_reference`]); genuinely heterogeneous tails push λ̂(1)
//! far above it. The two-argument surface R̂(x,y) generalizes λ̂ with
//! thresholds `n − kx` and `n − ky`; by construction `λ̂(u) = R̂(1, 1/u)`.
//!
//! From λ̂ the variance-reduction factor Δ̂ is assembled: the asymptotic
//! variance of the endpoint estimator shrinks from σ²_iid(γ) to
//! σ²_iid(γ)·(1 − Δ) under tail heterogeneity, so Δ̂ directly tightens
//! confidence bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SpeedSample;

/// Tolerance for the non-increasing check on curve values: grid points
/// computed through independent floating-point paths (e.g. an oracle's
/// bisection) may jitter by a few ulps around a flat stretch.
const MONOTONE_TOLERANCE: f64 = 1e-9;

/// Evaluates λ̂, R̂, the m_λ̂ integrals, and Δ̂ on one grouped sample.
///
/// `ranks` must be the 1-based ascending ranks of `sample.values()` in
/// the pooled sample (as produced by
/// [`SortedSample::ranks`](crate::evt::SortedSample::ranks) on the same
/// sample). Every athlete needs at least two observations — route the
/// sample through
/// [`prepare_for_lambda`](crate::ingest::SpeedSample::prepare_for_lambda)
/// first if singletons may be present.
#[derive(Debug, Clone, Copy)]
pub struct LambdaEstimator<'a> {
    sample: &'a SpeedSample,
    ranks: &'a [usize],
    k: usize,
}

impl<'a> LambdaEstimator<'a> {
    pub fn new(sample: &'a SpeedSample, ranks: &'a [usize], k: usize) -> Result<Self> {
        let n = sample.n();
        if ranks.len() != n {
            return Err(Error::structure(format!(
                "rank array has length {} but the sample has {n} values",
                ranks.len()
            )));
        }
        if k == 0 || n < 2 || k > n - 1 {
            return Err(Error::KOutOfRange { k, n });
        }
        for (l, &size) in sample.group_sizes().iter().enumerate() {
            if size < 2 {
                return Err(Error::GroupTooSmall { group: l, size });
            }
        }
        Ok(LambdaEstimator { sample, ranks, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.sample.n()
    }

    fn group_ranks(&self, l: usize) -> &[usize] {
        let off = self.sample.group_offsets()[l];
        &self.ranks[off..off + self.sample.group_sizes()[l]]
    }

    /// The surface R̂(x,y): per athlete, ordered pairs (j₁ ≠ j₂) with
    /// `R_{j₁} > n − kx` and `R_{j₂} > n − ky`, normalized by `m_ℓ − 1`,
    /// averaged over `k`. Symmetric in (x, y) and non-decreasing in each.
    pub fn r_at(&self, x: f64, y: f64) -> f64 {
        assert!(x.is_finite() && x > 0.0, "r_at needs x > 0, got {x}");
        assert!(y.is_finite() && y > 0.0, "r_at needs y > 0, got {y}");
        let n = self.sample.n() as f64;
        let kf = self.k as f64;
        let tx = n - kf * x;
        let ty = n - kf * y;

        let mut sum = 0.0;
        for l in 0..self.sample.p() {
            let ranks = self.group_ranks(l);
            let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
            for &r in ranks {
                let rf = r as f64;
                let in_x = rf > tx;
                let in_y = rf > ty;
                a += in_x as usize;
                b += in_y as usize;
                both += (in_x && in_y) as usize;
            }
            // Ordered pairs j1 != j2 passing both thresholds: a·b minus
            // the diagonal (pairs with j1 = j2 are not pairs).
            sum += (a * b - both) as f64 / (ranks.len() - 1) as f64;
        }
        sum / kf
    }

    /// λ̂(u) for any u > 0. Defined as `R̂(1, 1/u)` — literally evaluated
    /// through the same code path, so the identity is exact.
    pub fn lambda_at(&self, u: f64) -> f64 {
        assert!(u.is_finite() && u > 0.0, "lambda_at needs u > 0, got {u}");
        self.r_at(1.0, 1.0 / u)
    }

    /// Evaluates λ̂ on a grid (strictly ascending, all > 0), producing a
    /// serializable curve. λ̂(1) is always evaluated directly, not read
    /// off the grid, so the curve's `lambda_at_1` is exact even when the
    /// grid skips u = 1.
    pub fn curve(&self, u_grid: &[f64]) -> Result<HeterogeneityCurve> {
        if u_grid.is_empty() {
            return Err(Error::invalid("u grid must not be empty"));
        }
        for w in u_grid.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::invalid(format!(
                    "u grid must be strictly ascending, got {} before {}",
                    w[0], w[1]
                )));
            }
        }
        if !u_grid[0].is_finite() || u_grid[0] <= 0.0 {
            return Err(Error::invalid(format!(
                "u grid must be positive, starts at {}",
                u_grid[0]
            )));
        }
        let lambda_hat: Vec<f64> = u_grid.par_iter().map(|&u| self.lambda_at(u)).collect();
        HeterogeneityCurve::new(
            self.k,
            self.sample.n(),
            self.sample.p(),
            u_grid.to_vec(),
            lambda_hat,
            self.lambda_at(1.0),
        )
    }

    /// R̂ on a rectangular grid, row-major over `xs` then `ys`.
    ///
    /// Bit-identical to calling [`Self::r_at`] pointwise, but counts
    /// each threshold's per-athlete exceedances once: the diagonal
    /// correction uses #{R > max(t_x, t_y)}, which is just the count at
    /// the smaller of the two grid coordinates.
    pub fn surface(&self, xs: &[f64], ys: &[f64]) -> Vec<f64> {
        for &c in xs.iter().chain(ys) {
            assert!(c.is_finite() && c > 0.0, "surface needs positive coordinates, got {c}");
        }
        let n = self.sample.n() as f64;
        let kf = self.k as f64;
        let p = self.sample.p();
        let count_all = |coord: f64| -> Vec<usize> {
            let t = n - kf * coord;
            let mut counts = Vec::with_capacity(p);
            for l in 0..p {
                counts.push(self.group_ranks(l).iter().filter(|&&r| r as f64 > t).count());
            }
            counts
        };
        let ax: Vec<Vec<usize>> = xs.iter().map(|&x| count_all(x)).collect();
        let ay: Vec<Vec<usize>> = ys.iter().map(|&y| count_all(y)).collect();
        let sizes = self.sample.group_sizes();
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                let both = if x <= y { &ax[i] } else { &ay[j] };
                let mut sum = 0.0;
                for l in 0..p {
                    sum += (ax[i][l] * ay[j][l] - both[l]) as f64 / (sizes[l] - 1) as f64;
                }
                out.push(sum / kf);
            }
        }
        out
    }

    /// m_λ̂(x) = (1+x)∫₀¹ uˣ λ̂(u) du, integrating the *exact* step
    /// function λ̂ — no grid is involved.
    ///
    /// Exchanging the sum and the integral turns each indicator
    /// `1[R > n − k/u]` into its exact weight
    /// `(1+x)∫₀¹ uˣ 1[u < k/(n−R)] du = min(1, k/(n−R))^(1+x)`
    /// (and 1 for R = n), so the integral reduces to one O(m_ℓ) pass per
    /// athlete. Requires x > −1 for integrability.
    pub fn m_lambda(&self, x: f64) -> Result<f64> {
        if !x.is_finite() || !(x > -1.0) {
            return Err(Error::invalid(format!("m_lambda requires x > -1, got {x}")));
        }
        let n = self.sample.n();
        let kf = self.k as f64;
        let top_threshold = n - self.k; // first indicator: rank > n-k
        let weight = |r: usize| -> f64 {
            if r >= n {
                1.0
            } else {
                let frac = kf / (n - r) as f64;
                if frac >= 1.0 {
                    1.0
                } else {
                    frac.powf(1.0 + x)
                }
            }
        };

        let mut total = 0.0;
        for l in 0..self.sample.p() {
            let ranks = self.group_ranks(l);
            let mut a = 0usize;
            let mut sum_w = 0.0;
            let mut sum_w_top = 0.0;
            for &r in ranks {
                let w = weight(r);
                sum_w += w;
                if r > top_threshold {
                    a += 1;
                    sum_w_top += w;
                }
            }
            // Σ_{j1≠j2} 1[R_{j1} in top k]·W(R_{j2})
            //   = Σ_{j1 in top} (sum_w − W(R_{j1})) = a·sum_w − sum_w_top.
            total += (a as f64 * sum_w - sum_w_top) / (ranks.len() - 1) as f64;
        }
        Ok(total / kf)
    }

    /// The variance-reduction factor Δ̂ at a given tail index, built from
    /// λ̂(1) and the exact m_λ̂ integrals at −γ and −2γ.
    ///
    /// Requires γ < 1/2 (so −2γ > −1 keeps m_λ̂ defined); the intended
    /// domain is γ < 0.
    pub fn delta(&self, gamma: f64) -> Result<VarianceReduction> {
        if !gamma.is_finite() || !(gamma < 0.5) {
            return Err(Error::invalid(format!(
                "delta requires gamma < 1/2 (so m_lambda(-2*gamma) is defined), got {gamma}"
            )));
        }
        let lambda_1 = self.lambda_at(1.0);
        let m_g = self.m_lambda(-gamma)?;
        let m_2g = self.m_lambda(-2.0 * gamma)?;
        Ok(VarianceReduction::assemble(gamma, lambda_1, m_g, m_2g))
    }
}

/// The weight triple (w₀, w₁, w₂) combining λ̂(1), m_λ̂(−γ), m_λ̂(−2γ)
/// into Δ̂. Sums to exactly 1 for every γ (algebraic identity):
///
/// ```text
/// w0 = (1-2γ)(1-3γ)(1-4γ) / (1-3γ+4γ²)
/// w1 = -2γ(1-γ)(1-4γ)     / (1-3γ+4γ²)
/// w2 = 8γ(1-2γ)²          / (1-3γ+4γ²)
/// ```
///
/// The denominator has no real roots, so the triple is defined for all
/// real γ; the intended domain is γ < 0.
pub fn weights(gamma: f64) -> [f64; 3] {
    let g = gamma;
    let denom = 1.0 - 3.0 * g + 4.0 * g * g;
    [
        (1.0 - 2.0 * g) * (1.0 - 3.0 * g) * (1.0 - 4.0 * g) / denom,
        -2.0 * g * (1.0 - g) * (1.0 - 4.0 * g) / denom,
        8.0 * g * (1.0 - 2.0 * g) * (1.0 - 2.0 * g) / denom,
    ]
}

/// Expected value of λ̂(u) for an exchangeable (homogeneous) sample:
/// `min((⌈k/u⌉ − 1)/(n − 1), 1)`. This is the dashed reference curve to
/// plot against λ̂ — an estimate hugging it is evidence *against* tail
/// heterogeneity.
///
/// `k/u` is snapped to an integer when within 1e-9 relative before the
/// ceiling, so rational grid points (u = 1/3 and friends) hit the exact
/// reference value despite floating-point division.
pub fn homogeneous_reference(n: usize, k: usize, u: f64) -> f64 {
    assert!(n >= 2, "homogeneous_reference needs n >= 2, got {n}");
    assert!(k >= 1, "homogeneous_reference needs k >= 1, got {k}");
    assert!(u.is_finite() && u > 0.0, "homogeneous_reference needs u > 0, got {u}");
    let ratio = k as f64 / u;
    let rounded = ratio.round();
    let ceiling = if (ratio - rounded).abs() <= 1e-9 * rounded.abs().max(1.0) {
        rounded
    } else {
        ratio.ceil()
    };
    ((ceiling - 1.0) / (n - 1) as f64).min(1.0)
}

/// λ̂ evaluated on a u-grid, with enough context (k, n, p) to interpret
/// it, plus the directly-evaluated λ̂(1).
///
/// Invariants (validated on construction and after deserialization):
/// the grid is strictly ascending and positive; values lie in
/// [0, n/k] and are non-increasing (up to a few-ulp tolerance for
/// independently computed grid points); if the grid contains u = 1,
/// the curve value there equals `lambda_at_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct HeterogeneityCurve {
    k: usize,
    n: usize,
    p: usize,
    u_grid: Vec<f64>,
    lambda_hat: Vec<f64>,
    lambda_at_1: f64,
}

#[derive(Deserialize)]
struct RawCurve {
    k: usize,
    n: usize,
    p: usize,
    u_grid: Vec<f64>,
    lambda_hat: Vec<f64>,
    lambda_at_1: f64,
}

impl TryFrom<RawCurve> for HeterogeneityCurve {
    type Error = Error;

    fn try_from(raw: RawCurve) -> Result<Self> {
        HeterogeneityCurve::new(raw.k, raw.n, raw.p, raw.u_grid, raw.lambda_hat, raw.lambda_at_1)
    }
}

impl HeterogeneityCurve {
    pub fn new(
        k: usize,
        n: usize,
        p: usize,
        u_grid: Vec<f64>,
        lambda_hat: Vec<f64>,
        lambda_at_1: f64,
    ) -> Result<Self> {
        if k == 0 || n < 2 {
            return Err(Error::KOutOfRange { k, n });
        }
        if u_grid.len() != lambda_hat.len() {
            return Err(Error::structure(format!(
                "{} grid points but {} lambda values",
                u_grid.len(),
                lambda_hat.len()
            )));
        }
        if u_grid.is_empty() {
            return Err(Error::invalid("curve grid must not be empty"));
        }
        if !u_grid[0].is_finite() || u_grid[0] <= 0.0 {
            return Err(Error::invalid("curve grid must be positive"));
        }
        for w in u_grid.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::invalid("curve grid must be strictly ascending"));
            }
        }
        let cap = n as f64 / k as f64;
        for (&u, &l) in u_grid.iter().zip(&lambda_hat) {
            if !l.is_finite() || l < 0.0 || l > cap {
                return Err(Error::invalid(format!(
                    "lambda value {l} at u={u} outside [0, n/k] = [0, {cap}]"
                )));
            }
        }
        for (w, uw) in lambda_hat.windows(2).zip(u_grid.windows(2)) {
            if w[1] > w[0] + MONOTONE_TOLERANCE {
                return Err(Error::invalid(format!(
                    "lambda must be non-increasing in u; rises from {} at u={} to {} at u={}",
                    w[0], uw[0], w[1], uw[1]
                )));
            }
        }
        if let Ok(pos) = u_grid.binary_search_by(|u| u.partial_cmp(&1.0).unwrap()) {
            if (lambda_hat[pos] - lambda_at_1).abs() > MONOTONE_TOLERANCE {
                return Err(Error::invalid(format!(
                    "curve value {} at u=1 disagrees with lambda_at_1 = {}",
                    lambda_hat[pos], lambda_at_1
                )));
            }
        }
        Ok(HeterogeneityCurve { k, n, p, u_grid, lambda_hat, lambda_at_1 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn u_grid(&self) -> &[f64] {
        &self.u_grid
    }

    pub fn lambda_hat(&self) -> &[f64] {
        &self.lambda_hat
    }

    pub fn lambda_at_1(&self) -> f64 {
        self.lambda_at_1
    }

    /// m_λ̂(x) = (1+x)∫₀¹ uˣ λ(u) du from the gridded curve.
    ///
    /// λ is taken piecewise linear between grid points and constant at
    /// the first grid value on (0, u₁] (λ̂ saturates as u → 0, so linear
    /// extrapolation would overshoot). Each piece is integrated against
    /// the weight uˣ in closed form, so a constant curve reproduces its
    /// constant exactly for every x. The grid must reach u = 1; pieces
    /// beyond 1 are ignored. The O(u₁^(1+x)) head and O(h²) interpolation
    /// errors shrink with grid density — the grid is the accuracy knob.
    ///
    /// Prefer [`LambdaEstimator::m_lambda`] when the sample is at hand:
    /// it integrates the exact step function with no grid error.
    pub fn m_lambda(&self, x: f64) -> Result<f64> {
        if !x.is_finite() || !(x > -1.0) {
            return Err(Error::invalid(format!("m_lambda requires x > -1, got {x}")));
        }
        let last = *self.u_grid.last().unwrap();
        if last < 1.0 - 1e-12 {
            return Err(Error::invalid(format!(
                "curve grid must reach u = 1 to integrate m_lambda; it ends at {last}"
            )));
        }

        // ∫ u^x du and ∫ u^(x+1) du antiderivatives.
        let prim0 = |u: f64| u.powf(x + 1.0) / (x + 1.0);
        let prim1 = |u: f64| u.powf(x + 2.0) / (x + 2.0);

        // Head piece (0, min(u1, 1)]: constant lambda_hat[0].
        let u1 = self.u_grid[0].min(1.0);
        let mut integral = self.lambda_hat[0] * prim0(u1);

        for i in 0..self.u_grid.len() - 1 {
            let (ua, ub) = (self.u_grid[i], self.u_grid[i + 1]);
            if ua >= 1.0 {
                break;
            }
            let hi = ub.min(1.0);
            // Line λ(u) = alpha + beta·u through the two grid points.
            let beta = (self.lambda_hat[i + 1] - self.lambda_hat[i]) / (ub - ua);
            let alpha = self.lambda_hat[i] - beta * ua;
            integral += alpha * (prim0(hi) - prim0(ua)) + beta * (prim1(hi) - prim1(ua));
        }
        Ok((1.0 + x) * integral)
    }

    /// Δ̂ from the gridded curve: grid m_λ̂ plus the stored exact λ̂(1).
    /// See [`LambdaEstimator::delta`] for the grid-free version.
    pub fn variance_reduction(&self, gamma: f64) -> Result<VarianceReduction> {
        if !gamma.is_finite() || !(gamma < 0.5) {
            return Err(Error::invalid(format!(
                "delta requires gamma < 1/2 (so m_lambda(-2*gamma) is defined), got {gamma}"
            )));
        }
        let m_g = self.m_lambda(-gamma)?;
        let m_2g = self.m_lambda(-2.0 * gamma)?;
        Ok(VarianceReduction::assemble(gamma, self.lambda_at_1, m_g, m_2g))
    }

    /// The curve as CSV rows `u,lambda_hat`. The companion metadata
    /// (k, n, p, λ̂(1)) serializes separately via [`CurveMeta`].
    pub fn to_csv(&self) -> String {
        use crate::ingest::format_float as ff;
        let mut out = String::from("u,lambda_hat\n");
        for (&u, &l) in self.u_grid.iter().zip(&self.lambda_hat) {
            out.push_str(&format!("{},{}\n", ff(u), ff(l)));
        }
        out
    }

    /// Writes [`Self::to_csv`] to a file.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// The JSON-header companion of the CSV serialization.
    pub fn meta(&self) -> CurveMeta {
        CurveMeta { k: self.k, n: self.n, p: self.p, lambda_at_1: self.lambda_at_1 }
    }
}

/// JSON header accompanying a curve's CSV dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub lambda_at_1: f64,
}

/// Δ̂ together with every ingredient that went into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReduction {
    /// Tail index the weights were evaluated at.
    pub gamma: f64,
    /// λ̂(1), directly evaluated.
    pub lambda_at_1: f64,
    /// m_λ̂(−γ).
    pub m_neg_gamma: f64,
    /// m_λ̂(−2γ).
    pub m_neg_2gamma: f64,
    /// (w₀, w₁, w₂) at γ; sums to 1 exactly.
    pub weights: [f64; 3],
    /// Δ̂ before clamping: w₀λ̂(1) + w₁m_λ̂(−γ) + w₂m_λ̂(−2γ).
    pub delta_raw: f64,
    /// Δ̂ clamped to [0, 0.999] — the value to use in variance formulas,
    /// since (1 − Δ) must stay positive.
    pub delta: f64,
    /// Whether clamping changed the value.
    pub clamped: bool,
}

impl VarianceReduction {
    /// Combines the three λ functionals with the weights at `gamma` and
    /// clamps the result into [0, 0.999].
    pub fn assemble(gamma: f64, lambda_at_1: f64, m_neg_gamma: f64, m_neg_2gamma: f64) -> Self {
        let w = weights(gamma);
        let delta_raw = w[0] * lambda_at_1 + w[1] * m_neg_gamma + w[2] * m_neg_2gamma;
        let delta = delta_raw.clamp(0.0, 0.999);
        VarianceReduction {
            gamma,
            lambda_at_1,
            m_neg_gamma,
            m_neg_2gamma,
            weights: w,
            delta_raw,
            delta,
            clamped: delta != delta_raw,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::SortedSample;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The hand-enumerated toy sample: two athletes, two observations
    /// each, values arranged so athlete 1 holds ranks {4, 3} and athlete
    /// 2 holds ranks {2, 1}.
    fn toy() -> (SpeedSample, Vec<usize>) {
        let sample =
            SpeedSample::new(vec![4.0, 3.0, 2.0, 1.0], vec![0, 2], vec![2, 2]).unwrap();
        let ranks = SortedSample::from_sample(&sample).unwrap().ranks().to_vec();
        assert_eq!(ranks, vec![4, 3, 2, 1]);
        (sample, ranks)
    }

    #[test]
    fn toy_lambda_is_exactly_one_at_half_and_one() {
        let (sample, ranks) = toy();
        let est = LambdaEstimator::new(&sample, &ranks, 2).unwrap();
        // Athlete 1: both ordered pairs pass (ranks 4, 3 > n-k = 2), so
        // Λ̂₁ = 2/(2-1) = 2; athlete 2 contributes 0; λ̂ = 2/k = 1.
        assert_eq!(est.lambda_at(1.0), 1.0);
        assert_eq!(est.lambda_at(0.5), 1.0);
        assert_eq!(est.r_at(1.0, 1.0), 1.0);
    }

    #[test]
    fn toy_lambda_beyond_one() {
        let (sample, ranks) = toy();
        let est = LambdaEstimator::new(&sample, &ranks, 2).unwrap();
        // u=2: second threshold n - k/u = 3; only rank 4 passes it, so
        // athlete 1 has a=2, b=1, both=1 → one ordered pair → Λ̂₁ = 1.
        assert_eq!(est.lambda_at(2.0), 0.5);
    }

    #[test]
    fn singleton_groups_are_rejected() {
        let sample = SpeedSample::new(vec![3.0, 2.0, 1.0], vec![0, 2], vec![2, 1]).unwrap();
        let ranks = SortedSample::from_sample(&sample).unwrap().ranks().to_vec();
        let err = LambdaEstimator::new(&sample, &ranks, 1).unwrap_err();
        assert!(matches!(err, Error::GroupTooSmall { group: 1, size: 1 }));
        assert!(err.to_string().contains("prepare_for_lambda"));
    }

    fn random_grouped_sample(rng: &mut ChaCha8Rng, max_n: usize) -> (SpeedSample, Vec<usize>) {
        let p = rng.gen_range(2..=max_n / 2);
        let mut sizes = Vec::with_capacity(p);
        let mut total = 0;
        for _ in 0..p {
            let m = rng.gen_range(2..=3);
            sizes.push(m);
            total += m;
        }
        let mut values: Vec<f64> = Vec::with_capacity(total);
        while values.len() < total {
            let v = rng.gen_range(1.0..100.0);
            if !values.contains(&v) {
                values.push(v);
            }
        }
        let mut offsets = Vec::with_capacity(p);
        let mut acc = 0;
        for &m in &sizes {
            offsets.push(acc);
            acc += m;
        }
        let sample = SpeedSample::new(values, offsets, sizes).unwrap();
        let ranks = SortedSample::from_sample(&sample).unwrap().ranks().to_vec();
        (sample, ranks)
    }

    #[test]
    fn matches_naive_double_loop_on_tiny_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (sample, ranks) = random_grouped_sample(&mut rng, 12);
            let n = sample.n();
            let k = rng.gen_range(1..n);
            let est = LambdaEstimator::new(&sample, &ranks, k).unwrap();
            for &u in &[0.2, 0.5, 0.8, 1.0, 1.5] {
                let fast = est.lambda_at(u);
                let slow = crate::sim::brute::lambda_naive(&sample, &ranks, k, u);
                assert_eq!(fast, slow, "n={n} k={k} u={u}");
            }
            for &(x, y) in &[(0.3, 1.2), (1.0, 1.0), (2.0, 0.4)] {
                assert_eq!(
                    est.r_at(x, y),
                    crate::sim::brute::r_naive(&sample, &ranks, k, x, y)
                );
            }
        }
    }

    #[test]
    fn lambda_equals_r_transform_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (sample, ranks) = random_grouped_sample(&mut rng, 60);
        let k = sample.n() / 3;
        let est = LambdaEstimator::new(&sample, &ranks, k).unwrap();
        for i in 1..=50 {
            let u = i as f64 / 50.0;
            let a = est.lambda_at(u);
            let b = est.r_at(1.0, 1.0 / u);
            assert_eq!(a.to_bits(), b.to_bits(), "u = {u}");
        }
    }

    #[test]
    fn r_is_symmetric_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (sample, ranks) = random_grouped_sample(&mut rng, 40);
        let k = sample.n() / 4 + 1;
        let est = LambdaEstimator::new(&sample, &ranks, k).unwrap();
        let grid = [0.1, 0.5, 1.0, 1.5, 2.0];
        for &x in &grid {
            for &y in &grid {
                assert_eq!(est.r_at(x, y).to_bits(), est.r_at(y, x).to_bits());
            }
        }
        for w in grid.windows(2) {
            for &y in &grid {
                assert!(est.r_at(w[0], y) <= est.r_at(w[1], y));
                assert!(est.r_at(y, w[0]) <= est.r_at(y, w[1]));
            }
        }
    }

    #[test]
    fn surface_is_bit_identical_to_pointwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let (sample, ranks) = random_grouped_sample(&mut rng, 70);
        let k = sample.n() / 4 + 1;
        let est = LambdaEstimator::new(&sample, &ranks, k).unwrap();
        let xs = [0.1, 0.7, 1.0, 1.9];
        let ys = [0.3, 1.0, 2.0];
        let surf = est.surface(&xs, &ys);
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                assert_eq!(
                    surf[i * ys.len() + j].to_bits(),
                    est.r_at(x, y).to_bits(),
                    "({x}, {y})"
                );
            }
        }
    }

    #[test]
    fn lambda_bounds_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let (sample, ranks) = random_grouped_sample(&mut rng, 50);
            let n = sample.n();
            let k = rng.gen_range(1..n);
            let est = LambdaEstimator::new(&sample, &ranks, k).unwrap();
            let cap = n as f64 / k as f64;
            let mut prev = f64::INFINITY;
            for i in 1..=40 {
                let u = i as f64 / 40.0;
                let l = est.lambda_at(u);
                assert!(l >= 0.0 && l <= cap);
                assert!(l <= prev, "lambda increased at u={u}");
                prev = l;
            }
        }
    }

    #[test]
    fn toy_m_lambda_is_one_for_every_exponent() {
        // On the toy sample λ̂ ≡ 1 on (0,1], so m_λ̂(x) = 1 exactly.
        let (sample, ranks) = toy();
        let est = LambdaEstimator::new(&sample, &ranks, 2).unwrap();
        for &x in &[0.0, 0.2, 0.4, 1.0, 3.0] {
            assert_relative_eq!(est.m_lambda(x).unwrap(), 1.0, epsilon = 1e-14);
        }
        assert!(est.m_lambda(-1.0).is_err());
        assert!(est.m_lambda(-1.5).is_err());
    }

    #[test]
    fn exact_m_lambda_matches_dense_riemann_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (sample, ranks) = random_grouped_sample(&mut rng, 80);
        let k = sample.n() / 4 + 1;
        let est = LambdaEstimator::new(&sample, &ranks, k).unwrap();
        for &x in &[0.0, 0.3, 0.6, 1.2] {
            let exact = est.m_lambda(x).unwrap();
            let riemann = crate::sim::brute::m_lambda_riemann(&sample, &ranks, k, x, 200_000);
            assert_abs_diff_eq!(exact, riemann, epsilon = 1e-3);
        }
    }

    #[test]
    fn grid_m_lambda_tracks_exact_m_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (sample, ranks) = random_grouped_sample(&mut rng, 120);
        let k = sample.n() / 5 + 2;
        let est = LambdaEstimator::new(&sample, &ranks, k).unwrap();
        let grid: Vec<f64> = (1..=1000).map(|i| i as f64 / 1000.0).collect();
        let curve = est.curve(&grid).unwrap();
        for &x in &[0.0, 0.25, 0.5, 1.0] {
            let exact = est.m_lambda(x).unwrap();
            let gridded = curve.m_lambda(x).unwrap();
            assert_abs_diff_eq!(exact, gridded, epsilon = 5e-3);
        }
    }

    #[test]
    fn curve_m_lambda_closed_forms() {
        // Constant curve: m ≡ c exactly for any exponent.
        let grid: Vec<f64> = (1..=50).map(|i| i as f64 / 50.0).collect();
        let vals = vec![0.7; 50];
        let c = HeterogeneityCurve::new(10, 100, 50, grid.clone(), vals, 0.7).unwrap();
        for &x in &[0.0, 0.2, 0.4, 2.0, -0.5] {
            assert_relative_eq!(c.m_lambda(x).unwrap(), 0.7, epsilon = 1e-12);
        }

        // λ(u) = 1 - u is exactly piecewise linear on any grid:
        // m(0) = ∫(1-u)du·1 = 1/2 up to the constant-head error on
        // (0, u₁]; with u₁ = 1/500 that error is ~2e-6.
        let grid: Vec<f64> = (1..=500).map(|i| i as f64 / 500.0).collect();
        let vals: Vec<f64> = grid.iter().map(|u| 1.0 - u).collect();
        let c = HeterogeneityCurve::new(10, 100, 50, grid, vals, 0.0).unwrap();
        assert_abs_diff_eq!(c.m_lambda(0.0).unwrap(), 0.5, epsilon = 1e-5);
        assert_abs_diff_eq!(c.m_lambda(1.0).unwrap(), 1.0 / 3.0, epsilon = 1e-5);
    }

    #[test]
    fn curve_grid_must_reach_one() {
        let grid: Vec<f64> = (1..=40).map(|i| i as f64 / 50.0).collect(); // ends at 0.8
        let vals = vec![0.5; 40];
        let c = HeterogeneityCurve::new(10, 100, 50, grid, vals, 0.5).unwrap();
        assert!(c.m_lambda(0.0).is_err());
    }

    #[test]
    fn weights_hand_vector_and_sum_to_one() {
        let w = weights(-0.2);
        assert_abs_diff_eq!(w[0], 4.032 / 1.76, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.864 / 1.76, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], -3.136 / 1.76, epsilon = 1e-12);
        assert_abs_diff_eq!(w[0], 2.2909, epsilon = 1e-4);
        assert_abs_diff_eq!(w[1], 0.4909, epsilon = 1e-4);
        assert_abs_diff_eq!(w[2], -1.7818, epsilon = 1e-4);

        assert_eq!(weights(0.0), [1.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..1000 {
            let gamma = -2.0 * rng.gen::<f64>();
            let w = weights(gamma);
            assert_abs_diff_eq!(w[0] + w[1] + w[2], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn homogeneous_reference_hand_values() {
        assert_relative_eq!(
            homogeneous_reference(25173, 1000, 1.0),
            999.0 / 25172.0,
            epsilon = 1e-15
        );
        // Saturation for tiny u.
        assert_eq!(homogeneous_reference(100, 50, 0.1), 1.0);
        // k = n-1, u = 1 → (n-2)/(n-1).
        assert_relative_eq!(homogeneous_reference(100, 99, 1.0), 98.0 / 99.0, epsilon = 1e-15);
        // Floating-point k/u just above an integer must not over-ceil:
        // 1000/(1/3) = 3000.0000000000005 snaps back to 3000.
        assert_relative_eq!(
            homogeneous_reference(25173, 1000, 1.0 / 3.0),
            2999.0 / 25172.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn curve_construction_validates_invariants() {
        // Rising lambda rejected.
        assert!(HeterogeneityCurve::new(
            10,
            100,
            50,
            vec![0.5, 1.0],
            vec![0.2, 0.4],
            0.4
        )
        .is_err());
        // Value above n/k rejected.
        assert!(HeterogeneityCurve::new(10, 100, 50, vec![0.5, 1.0], vec![11.0, 0.4], 0.4)
            .is_err());
        // Non-ascending grid rejected.
        assert!(HeterogeneityCurve::new(10, 100, 50, vec![1.0, 0.5], vec![0.4, 0.4], 0.4)
            .is_err());
        // lambda_at_1 must agree with the grid at u=1.
        assert!(HeterogeneityCurve::new(10, 100, 50, vec![0.5, 1.0], vec![0.5, 0.4], 0.3)
            .is_err());
    }

    #[test]
    fn curve_from_estimator_is_consistent_and_serializable() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (sample, ranks) = random_grouped_sample(&mut rng, 60);
        let k = sample.n() / 3;
        let est = LambdaEstimator::new(&sample, &ranks, k).unwrap();
        let grid: Vec<f64> = (1..=80).map(|i| i as f64 / 80.0).collect();
        let curve = est.curve(&grid).unwrap();
        assert_eq!(curve.lambda_at_1(), est.lambda_at(1.0));
        // Grid endpoint u=1 equals the direct evaluation.
        assert_eq!(curve.lambda_hat()[79], curve.lambda_at_1());

        let json = serde_json::to_string(&curve).unwrap();
        let back: HeterogeneityCurve = serde_json::from_str(&json).unwrap();
        assert_eq!(back, curve);
    }

    #[test]
    fn delta_clamps_and_flags() {
        let (sample, ranks) = toy();
        let est = LambdaEstimator::new(&sample, &ranks, 2).unwrap();
        // γ = 0 → weights (1,0,0) → Δ̂_raw = λ̂(1) = 1.0 → clamped to 0.999.
        let vr = est.delta(0.0).unwrap();
        assert_eq!(vr.delta_raw, 1.0);
        assert_eq!(vr.delta, 0.999);
        assert!(vr.clamped);

        // Same at a negative gamma: λ functionals are all 1 on the toy
        // sample and the weights sum to 1, so Δ̂_raw = 1 again.
        let vr = est.delta(-0.3).unwrap();
        assert_abs_diff_eq!(vr.delta_raw, 1.0, epsilon = 1e-12);
        assert!(vr.clamped);

        assert!(est.delta(0.5).is_err());
    }

    #[test]
    fn zero_curve_gives_zero_delta() {
        let grid: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let zero = HeterogeneityCurve::new(10, 1000, 400, grid, vec![0.0; 100], 0.0).unwrap();
        for &gamma in &[-0.1, -0.25, -0.5, -1.0, 0.0] {
            let vr = zero.variance_reduction(gamma).unwrap();
            assert_eq!(vr.delta_raw, 0.0);
            assert_eq!(vr.delta, 0.0);
            assert!(!vr.clamped);
        }
    }

    #[test]
    fn negative_raw_delta_clamps_to_zero() {
        let vr = VarianceReduction::assemble(-0.2, 0.05, 0.16, 0.14);
        assert!(vr.delta_raw < 0.0, "raw = {}", vr.delta_raw);
        assert_eq!(vr.delta, 0.0);
        assert!(vr.clamped);
    }

    #[test]
    fn variance_reduction_serde_round_trip() {
        let vr = VarianceReduction::assemble(-0.2, 0.63, 0.55, 0.5);
        let json = serde_json::to_string(&vr).unwrap();
        let back: VarianceReduction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vr);
    }

    #[test]
    fn estimator_delta_matches_curve_delta_on_fine_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let (sample, ranks) = random_grouped_sample(&mut rng, 150);
        let k = sample.n() / 5 + 2;
        let est = LambdaEstimator::new(&sample, &ranks, k).unwrap();
        let grid: Vec<f64> = (1..=2000).map(|i| i as f64 / 2000.0).collect();
        let curve = est.curve(&grid).unwrap();
        let exact = est.delta(-0.25).unwrap();
        let gridded = curve.variance_reduction(-0.25).unwrap();
        assert_abs_diff_eq!(exact.delta_raw, gridded.delta_raw, epsilon = 2e-2);
        assert_eq!(exact.lambda_at_1, gridded.lambda_at_1);
    }
}
