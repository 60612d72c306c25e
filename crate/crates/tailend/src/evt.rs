//! Order statistics and the classical tail estimators.
//!
//! Everything here operates on a [`SortedSample`]: the ascending order
//! statistics of a pooled sample together with the rank of each original
//! observation. From the top `k + 1` order statistics we compute the
//! log-spacing moments, the moment estimator of the extreme value index,
//! and — when that index is negative — the endpoint and scale of the tail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SpeedSample;

/// Ascending order statistics plus the rank array of the original sample.
///
/// `ranks()[i]` is the 1-based ascending rank of the i-th value of the
/// sample the view was built from (rank `n` = maximum). Values must be
/// strictly distinct; a tie makes ranks ill-defined and is a hard error.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSample {
    values: Vec<f64>,
    ranks: Vec<usize>,
}

impl SortedSample {
    /// Sorts the pooled values of a grouped sample.
    pub fn from_sample(sample: &SpeedSample) -> Result<Self> {
        Self::from_values(sample.values().to_vec())
    }

    /// Sorts a raw value vector. Values must be finite, positive, and
    /// strictly distinct.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!(
                    "sample value {v} at index {i} is not positive and finite"
                )));
            }
        }
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());

        let mut ranks = vec![0usize; n];
        let mut sorted = Vec::with_capacity(n);
        for (pos, &idx) in order.iter().enumerate() {
            if pos > 0 && values[order[pos - 1]] == values[idx] {
                return Err(Error::DuplicateValues {
                    value: values[idx],
                    first: order[pos - 1],
                    second: idx,
                });
            }
            ranks[idx] = pos + 1;
            sorted.push(values[idx]);
        }
        Ok(SortedSample { values: sorted, ranks })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Values in ascending order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// 1-based ascending ranks, aligned with the original sample order.
    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// The `r`-th smallest value (1-based; `r = n` is the maximum).
    pub fn order_statistic(&self, r: usize) -> f64 {
        self.values[r - 1]
    }

    /// The tail threshold: the (n−k)-th order statistic, i.e. the value
    /// just below the top `k`.
    pub fn threshold(&self, k: usize) -> Result<f64> {
        check_k(k, self.n())?;
        Ok(self.values[self.n() - 1 - k])
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || n < 2 || k > n - 1 {
        return Err(Error::KOutOfRange { k, n });
    }
    Ok(())
}

/// First and second log-spacing moments over the top `k` values:
///
/// ```text
/// m_r = (1/k) Σ_{i=0}^{k-1} (log X_{n-i,n} - log X_{n-k,n})^r,  r = 1, 2
/// ```
///
/// Spacings are computed as differences of logs (not logs of ratios) so
/// the test vectors are bit-reproducible.
pub fn log_moments(sorted: &SortedSample, k: usize) -> Result<(f64, f64)> {
    let n = sorted.n();
    check_k(k, n)?;
    let log_threshold = sorted.values()[n - 1 - k].ln();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for i in 0..k {
        let spacing = sorted.values()[n - 1 - i].ln() - log_threshold;
        m1 += spacing;
        m2 += spacing * spacing;
    }
    Ok((m1 / k as f64, m2 / k as f64))
}

/// The moment estimator of the extreme value index:
///
/// ```text
/// V_n = (1/2) (1 - m1²/m2)⁻¹,    γ̂ = m1 + 1 - V_n
/// ```
///
/// Returns `(v_n, gamma)`. Requires `m2 > m1²` strictly (Cauchy–Schwarz
/// guarantees `m2 ≥ m1²`; equality means the top spacings degenerated —
/// e.g. `k = 1` — and the estimator is undefined).
pub fn moment_gamma(m1: f64, m2: f64) -> Result<(f64, f64)> {
    let m1_sq = m1 * m1;
    if !(m2 > m1_sq) {
        return Err(Error::DegenerateSpacings { m2, m1_sq });
    }
    let v_n = 0.5 / (1.0 - m1_sq / m2);
    let gamma = m1 + 1.0 - v_n;
    Ok((v_n, gamma))
}

/// Endpoint estimator: `x̂* = threshold · (1 - m1·v_n/gamma)`.
///
/// Only defined for `gamma < 0` (the finite-endpoint regime); exceeds the
/// threshold whenever `m1 > 0`.
pub fn endpoint(threshold: f64, m1: f64, v_n: f64, gamma: f64) -> Result<f64> {
    if !(gamma < 0.0) {
        return Err(Error::NoFiniteEndpoint { gamma });
    }
    Ok(threshold * (1.0 - m1 * v_n / gamma))
}

/// Scale estimator `â = threshold · m1 · v_n`, the unique choice for
/// which `endpoint = threshold - â/gamma` holds exactly.
pub fn scale(threshold: f64, m1: f64, v_n: f64) -> f64 {
    threshold * m1 * v_n
}

/// All tail statistics at one choice of `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Number of top order statistics used.
    pub k: usize,
    /// The (n−k)-th order statistic `X_{n-k,n}`.
    pub threshold: f64,
    /// First log-spacing moment `M¹`.
    pub m1: f64,
    /// Second log-spacing moment `M²`.
    pub m2: f64,
    /// `V_n = ½(1 - m1²/m2)⁻¹`.
    pub v_n: f64,
    /// Moment estimator `γ̂ = m1 + 1 - v_n` of the extreme value index.
    pub gamma: f64,
    /// Endpoint estimate `x̂*` (same unit as the sample values).
    pub endpoint: f64,
    /// Scale estimate `â = threshold · m1 · v_n`.
    pub scale: f64,
}

impl TailFit {
    /// Computes the full fit at `k` from a sorted sample.
    ///
    /// Errors if `k` is out of range, the spacings degenerate, or the
    /// estimated index is non-negative (no finite endpoint at this `k`).
    pub fn from_sorted(sorted: &SortedSample, k: usize) -> Result<TailFit> {
        let (m1, m2) = log_moments(sorted, k)?;
        let (v_n, gamma) = moment_gamma(m1, m2)?;
        let threshold = sorted.threshold(k)?;
        let endpoint = endpoint(threshold, m1, v_n, gamma)?;
        let scale = scale(threshold, m1, v_n);
        Ok(TailFit { k, threshold, m1, m2, v_n, gamma, endpoint, scale })
    }

    /// Header for the CSV row form.
    pub fn csv_header() -> &'static str {
        "k,threshold,m1,m2,v_n,gamma,endpoint,scale"
    }

    /// One CSV row matching [`TailFit::csv_header`].
    pub fn to_csv_row(&self) -> String {
        use crate::ingest::format_float as ff;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.k,
            ff(self.threshold),
            ff(self.m1),
            ff(self.m2),
            ff(self.v_n),
            ff(self.gamma),
            ff(self.endpoint),
            ff(self.scale)
        )
    }
}
