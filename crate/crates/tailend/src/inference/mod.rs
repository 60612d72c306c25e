//! Endpoint inference: asymptotic variance, confidence bounds, the
//! k-sweep protocol, and the extrapolation series behind endpoint plots.
//!
//! The central asymptotic fact: for γ < 0 the studentized endpoint gap
//! `S·ln(x̂*/x*)` is approximately standard normal scaled by
//! `σ_iid(γ)·√(1 − Δ)`, where `S = (γ̂²/(m₁V_n) − γ̂)√k`, σ²_iid is the
//! classic moment-estimator endpoint variance, and Δ is the
//! heterogeneity discount of [`crate::heterogeneity`]. Inverting that on
//! the log scale gives upper confidence bounds for the ultimate speed —
//! equivalently, lower bounds for the ultimate time.

mod normal;

pub use normal::{erf, erfc, normal_cdf, normal_pdf, normal_quantile};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::evt::{SortedSample, TailFit};
use crate::heterogeneity::{HeterogeneityCurve, LambdaEstimator, VarianceReduction};
use crate::ingest::{format_float, to_time, SingletonPolicy, SpeedSample};

/// Asymptotic variance of the moment-estimator endpoint under
/// within-athlete independence:
///
/// ```text
/// σ²_iid(γ) = (1-γ)²(1-3γ+4γ²) / ((1-2γ)(1-3γ)(1-4γ))
/// ```
///
/// Defined for γ < 1/4 (all three denominator factors positive); errors
/// otherwise. σ²_iid(0) = 1.
pub fn sigma2_iid(gamma: f64) -> Result<f64> {
    if !gamma.is_finite() || !(gamma < 0.25) {
        return Err(Error::invalid(format!(
            "sigma2_iid requires gamma < 1/4, got {gamma}"
        )));
    }
    let g = gamma;
    let num = (1.0 - g) * (1.0 - g) * (1.0 - 3.0 * g + 4.0 * g * g);
    let den = (1.0 - 2.0 * g) * (1.0 - 3.0 * g) * (1.0 - 4.0 * g);
    Ok(num / den)
}

/// The studentizing scale `S = (γ̂²/(m₁·V_n) − γ̂)·√k`: the factor that
/// turns `ln(x̂*/x*)` into an asymptotically standard-normal quantity
/// (after dividing by σ_iid√(1−Δ)). Positive whenever γ̂ < 0.
pub fn stat_scale(fit: &TailFit) -> f64 {
    (fit.gamma * fit.gamma / (fit.m1 * fit.v_n) - fit.gamma) * (fit.k as f64).sqrt()
}

/// Confidence bounds at one level, on both scales.
///
/// The defining pair is (`ucb_speed`, `lcb_time`): with probability
/// `level` the ultimate speed lies below `ucb_speed`, i.e. the ultimate
/// time lies above `lcb_time`. The companion pair (`lcb_speed`,
/// `ucb_time`) flips the inequality (z ↦ −z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBounds {
    pub level: f64,
    pub z: f64,
    pub ucb_speed: f64,
    pub lcb_speed: f64,
    pub lcb_time: f64,
    pub ucb_time: f64,
}

/// One-sided confidence bounds for the ultimate record from a tail fit
/// and a variance-reduction factor.
///
/// The speed-scale bound inverts the studentized log gap exactly:
/// `ucb_speed = x̂* · exp(z·σ_iid(γ̂)·√(1−Δ̂)/S)` — no first-order
/// linearization. Time bounds convert through `distance_m`.
///
/// Requires γ̂ < 0 (else no finite endpoint), Δ̂ ∈ [0, 1), and a level
/// strictly inside (0, 1).
pub fn confidence_bounds(
    fit: &TailFit,
    delta: f64,
    level: f64,
    distance_m: f64,
) -> Result<LevelBounds> {
    if !(fit.gamma < 0.0) {
        return Err(Error::NoFiniteEndpoint { gamma: fit.gamma });
    }
    if !delta.is_finite() || !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!(
            "variance-reduction factor must lie in [0, 1), got {delta}"
        )));
    }
    let z = normal_quantile(level)?;
    let sigma = (sigma2_iid(fit.gamma)? * (1.0 - delta)).sqrt();
    let s = stat_scale(fit);
    let half_width = z * sigma / s;
    let ucb_speed = fit.endpoint * half_width.exp();
    let lcb_speed = fit.endpoint * (-half_width).exp();
    Ok(LevelBounds {
        level,
        z,
        ucb_speed,
        lcb_speed,
        lcb_time: to_time(ucb_speed, distance_m)?,
        ucb_time: to_time(lcb_speed, distance_m)?,
    })
}

/// Key for the per-level maps on [`InferenceResult`]: the shortest
/// round-trip decimal of the level, e.g. `"0.95"`.
pub fn level_key(level: f64) -> String {
    format_float(level)
}

/// A complete endpoint inference at one k: point estimates on both
/// scales plus per-level one-sided bounds, keyed by [`level_key`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub k: usize,
    pub gamma: f64,
    pub endpoint_speed: f64,
    pub endpoint_time: f64,
    pub sigma2_iid: f64,
    pub delta: f64,
    pub stat_scale: f64,
    pub lcb_time: BTreeMap<String, f64>,
    pub ucb_speed: BTreeMap<String, f64>,
    pub lcb_speed: BTreeMap<String, f64>,
    pub ucb_time: BTreeMap<String, f64>,
}

impl InferenceResult {
    fn from_parts(
        fit: &TailFit,
        delta: f64,
        levels: &[f64],
        distance_m: f64,
    ) -> Result<InferenceResult> {
        if levels.is_empty() {
            return Err(Error::invalid("at least one confidence level is required"));
        }
        let mut lcb_time = BTreeMap::new();
        let mut ucb_speed = BTreeMap::new();
        let mut lcb_speed = BTreeMap::new();
        let mut ucb_time = BTreeMap::new();
        for &level in levels {
            let b = confidence_bounds(fit, delta, level, distance_m)?;
            let key = level_key(level);
            lcb_time.insert(key.clone(), b.lcb_time);
            ucb_speed.insert(key.clone(), b.ucb_speed);
            lcb_speed.insert(key.clone(), b.lcb_speed);
            ucb_time.insert(key, b.ucb_time);
        }
        Ok(InferenceResult {
            k: fit.k,
            gamma: fit.gamma,
            endpoint_speed: fit.endpoint,
            endpoint_time: to_time(fit.endpoint, distance_m)?,
            sigma2_iid: sigma2_iid(fit.gamma)?,
            delta,
            stat_scale: stat_scale(fit),
            lcb_time,
            ucb_speed,
            lcb_speed,
            ucb_time,
        })
    }

    /// The time-scale lower bound at a level, if it was computed.
    pub fn lcb_time_at(&self, level: f64) -> Option<f64> {
        self.lcb_time.get(&level_key(level)).copied()
    }

    /// The speed-scale upper bound at a level, if it was computed.
    pub fn ucb_speed_at(&self, level: f64) -> Option<f64> {
        self.ucb_speed.get(&level_key(level)).copied()
    }
}

/// Lower-middle median: sorts a copy and takes index `(len−1)/2`, so an
/// even-length input yields an actually-attained value rather than an
/// interpolated one.
pub(crate) fn lower_median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted[(sorted.len() - 1) / 2]
}

/// Column label for a level in sweep CSVs: `lcb95_time` for 0.95. Levels
/// that are not round percents keep their full decimal form.
pub fn level_pct_label(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format_float(pct)
    }
}

/// Results of estimating at every k in a range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Confidence levels shared by every row.
    pub levels: Vec<f64>,
    /// Per-k inferences, ascending in k, one per retained k.
    pub rows: Vec<InferenceResult>,
    /// Tail fits aligned with `rows`.
    pub fits: Vec<TailFit>,
    /// ks where no finite-endpoint estimate exists (γ̂ ≥ 0, degenerate
    /// spacings, or k out of range for the singleton-prepared sample).
    pub excluded_k: Vec<usize>,
    /// Lower-middle median of γ̂ over retained rows.
    pub median_gamma: f64,
    /// Lower-middle median of the endpoint on the time scale.
    pub median_endpoint_time: f64,
    /// Per-level lower-middle medians of the time-scale lower bounds.
    pub median_lcb_time: BTreeMap<String, f64>,
}

impl SweepResult {
    /// CSV of the sweep rows: `k,gamma,endpoint_time,sigma2_iid,delta`
    /// followed by one `lcb{pct}_time` column per level.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("k,gamma,endpoint_time,sigma2_iid,delta");
        for &level in &self.levels {
            header.push_str(&format!(",lcb{}_time", level_pct_label(level)));
        }
        header.push('\n');
        let mut out = header;
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}",
                row.k,
                format_float(row.gamma),
                format_float(row.endpoint_time),
                format_float(row.sigma2_iid),
                format_float(row.delta)
            ));
            for &level in &self.levels {
                out.push_str(&format!(",{}", format_float(row.lcb_time[&level_key(level)])));
            }
            out.push('\n');
        }
        out
    }

    /// CSV of the per-k tail fits (same rows as [`Self::to_csv`]).
    pub fn fits_csv(&self) -> String {
        let mut out = String::from(TailFit::csv_header());
        out.push('\n');
        for fit in &self.fits {
            out.push_str(&fit.to_csv_row());
            out.push('\n');
        }
        out
    }
}

/// One point of the extrapolation series: the `rank`-th largest speed
/// plotted against `rank^(−γ̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationPoint {
    pub rank: usize,
    pub transformed_rank: f64,
    pub speed: f64,
}

/// The straight-line view of the tail: under the fitted model the r-th
/// largest speed is approximately `intercept + slope·r^(−γ̂)`, with
/// `intercept = x̂*` — so the endpoint is the line's value at 0, i.e.
/// the y-intercept that record progressions creep toward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationSeries {
    /// `(â/γ̂)·k^γ̂` — negative for γ̂ < 0, so speeds rise toward the
    /// intercept as the transformed rank falls to 0.
    pub slope: f64,
    /// Exactly the endpoint estimate x̂*.
    pub intercept: f64,
    pub gamma: f64,
    pub k: usize,
    pub points: Vec<ExtrapolationPoint>,
}

/// Sidecar metadata for an extrapolation CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationMeta {
    pub slope: f64,
    pub intercept: f64,
    pub gamma: f64,
    pub k: usize,
}

impl ExtrapolationSeries {
    /// The fitted line at a transformed rank t.
    pub fn line_value(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }

    pub fn meta(&self) -> ExtrapolationMeta {
        ExtrapolationMeta {
            slope: self.slope,
            intercept: self.intercept,
            gamma: self.gamma,
            k: self.k,
        }
    }

    /// CSV rows `rank,transformed_rank,speed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,transformed_rank,speed\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{}\n",
                p.rank,
                format_float(p.transformed_rank),
                format_float(p.speed)
            ));
        }
        out
    }
}

/// Builds the extrapolation series for the top `max_rank` observations
/// of a sorted sample under a tail fit. Requires γ̂ < 0 and
/// `1 ≤ max_rank ≤ n`.
pub fn extrapolation_series(
    sorted: &SortedSample,
    fit: &TailFit,
    max_rank: usize,
) -> Result<ExtrapolationSeries> {
    if !(fit.gamma < 0.0) {
        return Err(Error::NoFiniteEndpoint { gamma: fit.gamma });
    }
    let n = sorted.n();
    if max_rank == 0 || max_rank > n {
        return Err(Error::invalid(format!(
            "max rank must lie in 1..={n}, got {max_rank}"
        )));
    }
    let slope = fit.scale / fit.gamma * (fit.k as f64).powf(fit.gamma);
    let points = (1..=max_rank)
        .map(|rank| ExtrapolationPoint {
            rank,
            transformed_rank: (rank as f64).powf(-fit.gamma),
            speed: sorted.order_statistic(n - rank + 1),
        })
        .collect();
    Ok(ExtrapolationSeries {
        slope,
        intercept: fit.endpoint,
        gamma: fit.gamma,
        k: fit.k,
        points,
    })
}

/// The full estimation pipeline bound to one sample: tail fits on the
/// complete data, heterogeneity estimates on the singleton-prepared
/// data, and everything assembled from them.
///
/// Construction sorts the sample once (and its prepared companion once),
/// so per-k operations are cheap enough to sweep.
#[derive(Debug, Clone)]
pub struct Analysis {
    distance_m: f64,
    sample: SpeedSample,
    sorted: SortedSample,
    prepared: SpeedSample,
    prepared_sorted: Option<SortedSample>,
    warnings: Vec<Warning>,
}

impl Analysis {
    /// Prepares a sample for analysis. `policy` governs how
    /// single-observation athletes enter the heterogeneity estimates
    /// (they always participate in tail fits). `distance_m` converts
    /// between speeds and times (100 for the century sprint).
    pub fn new(sample: SpeedSample, policy: SingletonPolicy, distance_m: f64) -> Result<Self> {
        if !distance_m.is_finite() || distance_m <= 0.0 {
            return Err(Error::invalid(format!(
                "distance must be positive, got {distance_m}"
            )));
        }
        if sample.n() < 2 {
            return Err(Error::invalid(format!(
                "need at least two observations to estimate anything, got {}",
                sample.n()
            )));
        }
        let sorted = SortedSample::from_sample(&sample)?;
        let (prepared, warnings) = sample.prepare_for_lambda(policy);
        let prepared_sorted = if prepared.n() >= 2 {
            Some(SortedSample::from_sample(&prepared)?)
        } else {
            None
        };
        Ok(Analysis { distance_m, sample, sorted, prepared, prepared_sorted, warnings })
    }

    pub fn n(&self) -> usize {
        self.sample.n()
    }

    pub fn p(&self) -> usize {
        self.sample.p()
    }

    pub fn distance_m(&self) -> f64 {
        self.distance_m
    }

    pub fn sample(&self) -> &SpeedSample {
        &self.sample
    }

    /// The singleton-prepared sample used for heterogeneity estimates.
    pub fn prepared(&self) -> &SpeedSample {
        &self.prepared
    }

    pub fn sorted(&self) -> &SortedSample {
        &self.sorted
    }

    /// Warnings accumulated while preparing the sample (dropped or
    /// duplicated singletons, collision bumps).
    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    /// Translates a tail fraction into a k: `round(frac·n)`, validated
    /// against `1..=n−1`.
    pub fn k_from_frac(&self, frac: f64) -> Result<usize> {
        if !frac.is_finite() || frac <= 0.0 || frac >= 1.0 {
            return Err(Error::invalid(format!(
                "tail fraction must lie strictly between 0 and 1, got {frac}"
            )));
        }
        let k = (frac * self.sample.n() as f64).round() as usize;
        let n = self.sample.n();
        if k == 0 || k > n - 1 {
            return Err(Error::KOutOfRange { k, n });
        }
        Ok(k)
    }

    /// Moment-estimator tail fit at one k, on the full sample.
    pub fn fit_at(&self, k: usize) -> Result<TailFit> {
        TailFit::from_sorted(&self.sorted, k)
    }

    /// The λ̂/R̂ estimator at one k, on the prepared sample.
    pub fn lambda_estimator(&self, k: usize) -> Result<LambdaEstimator<'_>> {
        let sorted = self.prepared_sorted.as_ref().ok_or_else(|| {
            Error::invalid(
                "heterogeneity estimation needs at least two observations after singleton \
                 preparation; the prepared sample is smaller than that",
            )
        })?;
        LambdaEstimator::new(&self.prepared, sorted.ranks(), k)
    }

    /// λ̂ on a grid at one k (plus the exact λ̂(1)).
    pub fn lambda_curve(&self, k: usize, u_grid: &[f64]) -> Result<HeterogeneityCurve> {
        self.lambda_estimator(k)?.curve(u_grid)
    }

    /// The variance-reduction factor at one k and tail index.
    pub fn delta_at(&self, k: usize, gamma: f64) -> Result<VarianceReduction> {
        self.lambda_estimator(k)?.delta(gamma)
    }

    /// Full inference at one k: tail fit, Δ̂ at the fitted γ̂, and
    /// per-level bounds. Returns the variance-reduction breakdown
    /// alongside the result (its `clamped` flag is worth surfacing).
    pub fn infer_at(
        &self,
        k: usize,
        levels: &[f64],
    ) -> Result<(InferenceResult, VarianceReduction)> {
        let fit = self.fit_at(k)?;
        if !(fit.gamma < 0.0) {
            return Err(Error::NoFiniteEndpoint { gamma: fit.gamma });
        }
        let vr = self.delta_at(k, fit.gamma)?;
        let result = InferenceResult::from_parts(&fit, vr.delta, levels, self.distance_m)?;
        Ok((result, vr))
    }

    /// Inference at one k with an externally chosen Δ — pass 0 to get
    /// the uncorrected (within-athlete independence) bounds.
    pub fn infer_with_delta(
        &self,
        k: usize,
        levels: &[f64],
        delta: f64,
    ) -> Result<InferenceResult> {
        let fit = self.fit_at(k)?;
        InferenceResult::from_parts(&fit, delta, levels, self.distance_m)
    }

    /// Extrapolation series at one k, over the top `max_rank` speeds.
    pub fn extrapolation(&self, k: usize, max_rank: usize) -> Result<ExtrapolationSeries> {
        let fit = self.fit_at(k)?;
        extrapolation_series(&self.sorted, &fit, max_rank)
    }

    /// Inference at every k in `round-up(min_frac·n) ..= round-down
    /// (max_frac·n)` with the given stride. ks without a finite-endpoint
    /// estimate are recorded in `excluded_k` rather than failing the
    /// sweep; it is an error only if *every* k is excluded.
    pub fn sweep(
        &self,
        min_frac: f64,
        max_frac: f64,
        step: usize,
        levels: &[f64],
    ) -> Result<SweepResult> {
        if !(min_frac > 0.0) || !(max_frac < 1.0) || !(min_frac <= max_frac) {
            return Err(Error::invalid(format!(
                "sweep range must satisfy 0 < min <= max < 1, got {min_frac}..{max_frac}"
            )));
        }
        if step == 0 {
            return Err(Error::invalid("sweep step must be at least 1"));
        }
        let n = self.sample.n() as f64;
        let k_min = ((min_frac * n).ceil() as usize).max(1);
        let k_max = ((max_frac * n).floor() as usize).min(self.sample.n() - 1);
        if k_min > k_max {
            return Err(Error::invalid(format!(
                "sweep range {min_frac}..{max_frac} contains no k for n = {n}"
            )));
        }

        let ks: Vec<usize> = (k_min..=k_max).step_by(step).collect();
        let outcomes: Vec<(usize, Option<(TailFit, InferenceResult)>)> = ks
            .par_iter()
            .map(|&k| {
                let fit = match self.fit_at(k) {
                    Ok(fit) if fit.gamma < 0.0 => fit,
                    Ok(_) | Err(Error::DegenerateSpacings { .. }) => return Ok((k, None)),
                    Err(e) => return Err(e),
                };
                match self.delta_at(k, fit.gamma) {
                    Ok(vr) => {
                        let row =
                            InferenceResult::from_parts(&fit, vr.delta, levels, self.distance_m)?;
                        Ok((k, Some((fit, row))))
                    }
                    // k exceeding the prepared sample's range is an
                    // exclusion, not a failure of the whole sweep.
                    Err(Error::KOutOfRange { .. }) => Ok((k, None)),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;

        let mut rows = Vec::new();
        let mut fits = Vec::new();
        let mut excluded_k = Vec::new();
        for (k, outcome) in outcomes {
            match outcome {
                Some((fit, row)) => {
                    fits.push(fit);
                    rows.push(row);
                }
                None => excluded_k.push(k),
            }
        }
        if rows.is_empty() {
            return Err(Error::invalid(format!(
                "no k in {k_min}..={k_max} produced a finite endpoint estimate"
            )));
        }

        let median_gamma = lower_median(&rows.iter().map(|r| r.gamma).collect::<Vec<_>>());
        let median_endpoint_time =
            lower_median(&rows.iter().map(|r| r.endpoint_time).collect::<Vec<_>>());
        let mut median_lcb_time = BTreeMap::new();
        for &level in levels {
            let key = level_key(level);
            let vals: Vec<f64> = rows.iter().map(|r| r.lcb_time[&key]).collect();
            median_lcb_time.insert(key, lower_median(&vals));
        }
        Ok(SweepResult {
            levels: levels.to_vec(),
            rows,
            fits,
            excluded_k,
            median_gamma,
            median_endpoint_time,
            median_lcb_time,
        })
    }
}
