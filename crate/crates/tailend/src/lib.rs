//! Estimation of the finite right endpoint of a distribution — the
//! *ultimate record* — from repeated observations grouped by athlete.
//!
//! Personal bests understate what a population is capable of: every
//! athlete's observations stop at their own ceiling, and the handful of
//! performances near the overall record say little on their own about
//! how much room is left. This crate implements an extreme-value
//! approach that uses *all* top results, not just one per athlete:
//!
//! 1. **Ingest** ([`ingest`]): parse result lists, cap the number of
//!    results per athlete, spread grid-rounded ties deterministically,
//!    and convert times to speeds so the interesting endpoint is a
//!    *right* endpoint.
//! 2. **Tail fit** ([`evt`]): the moment estimator of the extreme-value
//!    index γ from the top k order statistics. A negative γ̂ means a
//!    finite endpoint, estimated as `x̂* = threshold − â/γ̂`.
//! 3. **Heterogeneity** ([`heterogeneity`]): athletes are not
//!    exchangeable — the same few people own most of the top k. The
//!    within-athlete co-exceedance curve λ̂ measures exactly that, and
//!    feeds the variance-reduction factor Δ̂.
//! 4. **Inference** ([`inference`]): one-sided confidence bounds for the
//!    ultimate record whose width shrinks by √(1−Δ̂), plus k-sweeps and
//!    extrapolation series for diagnostics.
//! 5. **Simulation** ([`sim`]): reverse-Weibull scenario sampling, a
//!    pre-limit oracle for every functional above, and Monte Carlo
//!    experiments (coverage, bias, surface convergence, paired bounds).
//!
//! # A two-minute tour
//!
//! ```
//! use tailend::{Analysis, Scenario, SingletonPolicy};
//!
//! // A synthetic population with a known answer: 2000 athletes, four
//! // results each, true endpoint speed 38 km/h (i.e. 9.474 s over 100m).
//! let scenario = Scenario::from_json_str(r#"{
//!     "p": 2000, "m": 4, "seed": 42,
//!     "family": {"kind": "reverse-weibull", "groups": [
//!         {"athletes": 2000, "endpoint": 38.0, "gamma": -0.2, "width": 2.0}
//!     ]}
//! }"#)?;
//! let sim = scenario.generate()?;
//!
//! let analysis = Analysis::new(sim.sample, SingletonPolicy::Drop, 100.0)?;
//! let k = analysis.k_from_frac(0.05)?;
//! let (result, _reduction) = analysis.infer_at(k, &[0.95])?;
//!
//! assert!(result.gamma < 0.0, "finite endpoint detected");
//! assert!((result.endpoint_speed - 38.0).abs() < 1.0);
//! // The 95% lower confidence bound for the ultimate time sits below
//! // the estimated ultimate time.
//! let lcb = result.lcb_time_at(0.95).unwrap();
//! assert!(lcb < result.endpoint_time);
//! # Ok::<(), tailend::Error>(())
//! ```
//!
//! Real data enters through [`RecordTable`] instead of a scenario; see
//! the guide in `book/` for the full pipeline, including wind handling
//! and tie smoothing.

// Parameter checks are written `!(x > 0.0)` on purpose: the negation
// rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evt;
pub mod heterogeneity;
pub mod inference;
pub mod ingest;
pub mod sim;

pub use error::{Error, Result, Warning};
pub use evt::{log_moments, moment_gamma, SortedSample, TailFit};
pub use heterogeneity::{
    homogeneous_reference, weights, CurveMeta, HeterogeneityCurve, LambdaEstimator,
    VarianceReduction,
};
pub use inference::{
    confidence_bounds, extrapolation_series, level_key, level_pct_label, normal_quantile,
    sigma2_iid, stat_scale, Analysis, ExtrapolationMeta, ExtrapolationPoint, ExtrapolationSeries,
    InferenceResult, LevelBounds, SweepResult,
};
pub use ingest::{
    format_float, to_speed, to_time, CsvSpec, RecordRow, RecordTable, SingletonPolicy,
    SpeedSample,
};
pub use sim::{
    bias_experiment, coverage_experiment, lemma_experiment, paired_experiment, AthleteGroup,
    BiasConfig, BiasReport, CoverageConfig, CoverageReport, DeltaMode, Family, GroundTruth,
    LemmaConfig, LemmaReport, MSpec, PairedConfig, PairedReport, Scenario, SimulatedSample,
    TailOracle, DEFAULT_SEED,
};

// The README's example runs too.
#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

// The guide's code blocks double as doctests, so the book can never
// drift from the API it documents.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data-preparation.md")]
    mod data_preparation {}
    #[doc = include_str!("../../../book/src/tail-estimation.md")]
    mod tail_estimation {}
    #[doc = include_str!("../../../book/src/heterogeneity.md")]
    mod heterogeneity {}
    #[doc = include_str!("../../../book/src/confidence-bounds.md")]
    mod confidence_bounds {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
