//! Monte Carlo experiments over scenarios: confidence-bound coverage,
//! estimator bias/RMSE against the pre-limit oracle, convergence of the
//! R̂ surface, and the paired value of the heterogeneity correction.
//!
//! Every experiment derives replication seeds from the scenario seed via
//! the splitmix64 stream, runs replications in parallel, and emits rows
//! in replication order — so reruns are byte-identical and a report is a
//! pure function of (scenario, config).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heterogeneity::LambdaEstimator;
use crate::inference::{level_key, lower_median, Analysis, InferenceResult};
use crate::ingest::{format_float, SingletonPolicy};
use crate::sim::oracle::{OracleReference, TailOracle};
use crate::sim::{rep_seed, splitmix64, Scenario};

/// Whether bounds use the estimated Δ̂ or the independence assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaMode {
    /// Estimate Δ̂ from the replication's sample.
    Corrected,
    /// Force Δ = 0 (within-athlete independence).
    Zero,
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("at least one confidence level is required"));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Coverage
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    /// Replications; at least 100 so the binomial SE means something.
    pub reps: usize,
    pub levels: Vec<f64>,
    /// Tail fraction; k = round(k_frac · n) per replication.
    pub k_frac: f64,
    pub policy: SingletonPolicy,
    pub delta_mode: DeltaMode,
    pub distance_m: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            reps: 500,
            levels: vec![0.75, 0.95],
            k_frac: 0.05,
            policy: SingletonPolicy::Drop,
            delta_mode: DeltaMode::Corrected,
            distance_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub rep: usize,
    pub seed: u64,
    pub k: usize,
    pub gamma: f64,
    pub delta: f64,
    pub endpoint_time: f64,
    pub lcb_time: BTreeMap<String, f64>,
    pub covered: BTreeMap<String, bool>,
}

/// Coverage of the time-scale lower confidence bound: the fraction of
/// replications whose bound lands strictly below the true ultimate time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub reps: usize,
    pub k_frac: f64,
    pub levels: Vec<f64>,
    pub delta_mode: DeltaMode,
    pub seed: u64,
    pub n: usize,
    pub truth_speed: f64,
    pub truth_time: f64,
    /// Per-level fraction of covering replications (failed replications
    /// count as non-covering).
    pub coverage: BTreeMap<String, f64>,
    /// Binomial standard error √(c(1−c)/reps) per level.
    pub binomial_se: BTreeMap<String, f64>,
    /// Replications where no finite-endpoint estimate existed.
    pub failures: usize,
    #[serde(skip_serializing)]
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    /// One CSV row per successful replication.
    pub fn rows_csv(&self) -> String {
        let mut header = String::from("rep,seed,k,gamma,delta,endpoint_time");
        for level in &self.levels {
            header.push_str(&format!(",lcb_time_{}", level_key(*level)));
        }
        for level in &self.levels {
            header.push_str(&format!(",covered_{}", level_key(*level)));
        }
        header.push('\n');
        let mut out = header;
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                row.rep,
                row.seed,
                row.k,
                format_float(row.gamma),
                format_float(row.delta),
                format_float(row.endpoint_time)
            ));
            for level in &self.levels {
                out.push_str(&format!(",{}", format_float(row.lcb_time[&level_key(*level)])));
            }
            for level in &self.levels {
                out.push_str(if row.covered[&level_key(*level)] { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }
}

pub fn coverage_experiment(
    scenario: &Scenario,
    cfg: &CoverageConfig,
) -> Result<CoverageReport> {
    if cfg.reps < 100 {
        return Err(Error::invalid(format!(
            "coverage needs at least 100 replications for a meaningful binomial error, got {}",
            cfg.reps
        )));
    }
    check_levels(&cfg.levels)?;
    scenario.validate()?;
    let truth = scenario.truth();
    let truth_time = truth.ultimate_time(cfg.distance_m)?;

    let outcomes: Vec<Option<CoverageRow>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| -> Result<Option<CoverageRow>> {
            let seed = rep_seed(scenario.seed, rep as u64);
            let mut replication = scenario.clone();
            replication.seed = seed;
            let sim = replication.generate()?;
            let analysis = Analysis::new(sim.sample, cfg.policy, cfg.distance_m)?;
            let k = analysis.k_from_frac(cfg.k_frac)?;
            let inferred: Result<InferenceResult> = match cfg.delta_mode {
                DeltaMode::Corrected => analysis.infer_at(k, &cfg.levels).map(|(r, _)| r),
                DeltaMode::Zero => analysis.infer_with_delta(k, &cfg.levels, 0.0),
            };
            let result = match inferred {
                Ok(r) => r,
                // A replication without a finite endpoint estimate is a
                // (counted) failure, not an abort of the experiment.
                Err(Error::NoFiniteEndpoint { .. }) | Err(Error::DegenerateSpacings { .. }) => {
                    return Ok(None)
                }
                Err(e) => return Err(e),
            };
            let mut covered = BTreeMap::new();
            for &level in &cfg.levels {
                let key = level_key(level);
                covered.insert(key.clone(), result.lcb_time[&key] < truth_time);
            }
            Ok(Some(CoverageRow {
                rep,
                seed,
                k,
                gamma: result.gamma,
                delta: result.delta,
                endpoint_time: result.endpoint_time,
                lcb_time: result.lcb_time,
                covered,
            }))
        })
        .collect::<Result<_>>()?;

    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let rows: Vec<CoverageRow> = outcomes.into_iter().flatten().collect();
    let mut coverage = BTreeMap::new();
    let mut binomial_se = BTreeMap::new();
    for &level in &cfg.levels {
        let key = level_key(level);
        let hits = rows.iter().filter(|r| r.covered[&key]).count();
        let c = hits as f64 / cfg.reps as f64;
        coverage.insert(key.clone(), c);
        binomial_se.insert(key, (c * (1.0 - c) / cfg.reps as f64).sqrt());
    }
    Ok(CoverageReport {
        reps: cfg.reps,
        k_frac: cfg.k_frac,
        levels: cfg.levels.clone(),
        delta_mode: cfg.delta_mode,
        seed: scenario.seed,
        n: scenario.n_total(),
        truth_speed: truth.endpoint_speed,
        truth_time,
        coverage,
        binomial_se,
        failures,
        rows,
    })
}

// ---------------------------------------------------------------------
// Paired correction value
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedConfig {
    pub reps: usize,
    pub level: f64,
    pub k_frac: f64,
    pub policy: SingletonPolicy,
    pub distance_m: f64,
}

impl Default for PairedConfig {
    fn default() -> Self {
        PairedConfig {
            reps: 200,
            level: 0.95,
            k_frac: 0.05,
            policy: SingletonPolicy::Drop,
            distance_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedRow {
    pub rep: usize,
    pub seed: u64,
    pub k: usize,
    pub gamma: f64,
    pub delta: f64,
    pub lcb_time_corrected: f64,
    pub lcb_time_iid: f64,
    /// Strictly higher (more informative) corrected bound.
    pub tighter: bool,
    pub covered_corrected: bool,
    pub covered_iid: bool,
}

/// Same-sample comparison of Δ̂-corrected and independence bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedReport {
    pub reps: usize,
    pub level: f64,
    pub k_frac: f64,
    pub seed: u64,
    pub n: usize,
    pub truth_time: f64,
    /// Fraction of replications where the corrected time-scale lower
    /// bound is strictly higher than the independence bound.
    pub fraction_tighter: f64,
    pub coverage_corrected: f64,
    pub coverage_iid: f64,
    pub failures: usize,
    #[serde(skip_serializing)]
    pub rows: Vec<PairedRow>,
}

impl PairedReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "rep,seed,k,gamma,delta,lcb_time_corrected,lcb_time_iid,tighter,\
             covered_corrected,covered_iid\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.rep,
                r.seed,
                r.k,
                format_float(r.gamma),
                format_float(r.delta),
                format_float(r.lcb_time_corrected),
                format_float(r.lcb_time_iid),
                r.tighter as u8,
                r.covered_corrected as u8,
                r.covered_iid as u8
            ));
        }
        out
    }
}

pub fn paired_experiment(scenario: &Scenario, cfg: &PairedConfig) -> Result<PairedReport> {
    if cfg.reps == 0 {
        return Err(Error::invalid("paired comparison needs at least one replication"));
    }
    scenario.validate()?;
    let truth_time = scenario.truth().ultimate_time(cfg.distance_m)?;

    let outcomes: Vec<Option<PairedRow>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| -> Result<Option<PairedRow>> {
            let seed = rep_seed(scenario.seed, rep as u64);
            let mut replication = scenario.clone();
            replication.seed = seed;
            let sim = replication.generate()?;
            let analysis = Analysis::new(sim.sample, cfg.policy, cfg.distance_m)?;
            let k = analysis.k_from_frac(cfg.k_frac)?;
            let levels = [cfg.level];
            let corrected = match analysis.infer_at(k, &levels) {
                Ok((r, _)) => r,
                Err(Error::NoFiniteEndpoint { .. }) | Err(Error::DegenerateSpacings { .. }) => {
                    return Ok(None)
                }
                Err(e) => return Err(e),
            };
            let iid = analysis.infer_with_delta(k, &levels, 0.0)?;
            let key = level_key(cfg.level);
            let (c, i) = (corrected.lcb_time[&key], iid.lcb_time[&key]);
            Ok(Some(PairedRow {
                rep,
                seed,
                k,
                gamma: corrected.gamma,
                delta: corrected.delta,
                lcb_time_corrected: c,
                lcb_time_iid: i,
                tighter: c > i,
                covered_corrected: c < truth_time,
                covered_iid: i < truth_time,
            }))
        })
        .collect::<Result<_>>()?;

    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let rows: Vec<PairedRow> = outcomes.into_iter().flatten().collect();
    let reps_f = cfg.reps as f64;
    Ok(PairedReport {
        reps: cfg.reps,
        level: cfg.level,
        k_frac: cfg.k_frac,
        seed: scenario.seed,
        n: scenario.n_total(),
        truth_time,
        fraction_tighter: rows.iter().filter(|r| r.tighter).count() as f64 / reps_f,
        coverage_corrected: rows.iter().filter(|r| r.covered_corrected).count() as f64 / reps_f,
        coverage_iid: rows.iter().filter(|r| r.covered_iid).count() as f64 / reps_f,
        failures,
        rows,
    })
}

// ---------------------------------------------------------------------
// Bias / RMSE against the oracle
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    /// Target total observation counts, ascending; the scenario is
    /// rescaled proportionally to each.
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub k_frac: f64,
    pub policy: SingletonPolicy,
    pub distance_m: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            n_grid: vec![2_000, 20_000, 200_000],
            reps: 100,
            k_frac: 0.05,
            policy: SingletonPolicy::Drop,
            distance_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasRepRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub gamma: f64,
    pub endpoint_speed: f64,
    pub lambda_at_1: f64,
    pub delta: f64,
}

/// Aggregates for one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasRow {
    pub n: usize,
    pub k: usize,
    pub reps_used: usize,
    pub failures: usize,
    pub ref_gamma: f64,
    pub ref_endpoint_speed: f64,
    pub ref_lambda_at_1: f64,
    pub ref_delta: f64,
    pub mean_gamma: f64,
    pub mean_endpoint_speed: f64,
    pub mean_lambda_at_1: f64,
    pub mean_delta: f64,
    pub rmse_gamma: f64,
    pub rmse_endpoint_speed: f64,
    pub rmse_lambda_at_1: f64,
    pub rmse_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub reps: usize,
    pub k_frac: f64,
    pub seed: u64,
    pub by_n: Vec<BiasRow>,
    #[serde(skip_serializing)]
    pub rows: Vec<BiasRepRow>,
}

impl BiasReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("n,rep,seed,gamma,endpoint_speed,lambda_at_1,delta\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.n,
                r.rep,
                r.seed,
                format_float(r.gamma),
                format_float(r.endpoint_speed),
                format_float(r.lambda_at_1),
                format_float(r.delta)
            ));
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    sum / count as f64
}

fn rmse(values: impl Iterator<Item = f64>, reference: f64) -> f64 {
    mean(values.map(|v| (v - reference) * (v - reference))).sqrt()
}

/// How close γ̂, x̂*, λ̂(1), and Δ̂ come to their pre-limit oracle
/// values as n grows with k/n fixed.
pub fn bias_experiment(scenario: &Scenario, cfg: &BiasConfig) -> Result<BiasReport> {
    if cfg.reps == 0 || cfg.n_grid.is_empty() {
        return Err(Error::invalid("bias study needs replications and a sample-size grid"));
    }
    if cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sample-size grid must be strictly ascending"));
    }
    scenario.validate()?;

    let mut by_n = Vec::new();
    let mut rows = Vec::new();
    for &n_target in &cfg.n_grid {
        let scaled = scenario.with_total_observations(n_target)?;
        let n = scaled.n_total();
        let k = ((cfg.k_frac * n as f64).round() as usize).clamp(2, n - 1);
        let reference = OracleReference::compute(&scaled, k)?;
        // Distinct base per sample size so replication streams never
        // collide across grid entries.
        let base = splitmix64(scaled.seed ^ (n as u64));

        let outcomes: Vec<Option<BiasRepRow>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| -> Result<Option<BiasRepRow>> {
                let seed = rep_seed(base, rep as u64);
                let mut replication = scaled.clone();
                replication.seed = seed;
                let sim = replication.generate()?;
                let analysis = Analysis::new(sim.sample, cfg.policy, cfg.distance_m)?;
                let fit = match analysis.fit_at(k) {
                    Ok(fit) if fit.gamma < 0.0 => fit,
                    Ok(_) => return Ok(None),
                    Err(Error::DegenerateSpacings { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let est = analysis.lambda_estimator(k)?;
                let vr = est.delta(fit.gamma)?;
                Ok(Some(BiasRepRow {
                    n,
                    rep,
                    seed,
                    gamma: fit.gamma,
                    endpoint_speed: fit.endpoint,
                    lambda_at_1: vr.lambda_at_1,
                    delta: vr.delta,
                }))
            })
            .collect::<Result<_>>()?;

        let failures = outcomes.iter().filter(|o| o.is_none()).count();
        let used: Vec<BiasRepRow> = outcomes.into_iter().flatten().collect();
        if used.is_empty() {
            return Err(Error::invalid(format!(
                "every replication at n = {n} failed to produce a finite endpoint"
            )));
        }
        by_n.push(BiasRow {
            n,
            k,
            reps_used: used.len(),
            failures,
            ref_gamma: reference.gamma,
            ref_endpoint_speed: reference.endpoint_speed,
            ref_lambda_at_1: reference.lambda_at_1,
            ref_delta: reference.delta,
            mean_gamma: mean(used.iter().map(|r| r.gamma)),
            mean_endpoint_speed: mean(used.iter().map(|r| r.endpoint_speed)),
            mean_lambda_at_1: mean(used.iter().map(|r| r.lambda_at_1)),
            mean_delta: mean(used.iter().map(|r| r.delta)),
            rmse_gamma: rmse(used.iter().map(|r| r.gamma), reference.gamma),
            rmse_endpoint_speed: rmse(
                used.iter().map(|r| r.endpoint_speed),
                reference.endpoint_speed,
            ),
            rmse_lambda_at_1: rmse(used.iter().map(|r| r.lambda_at_1), reference.lambda_at_1),
            rmse_delta: rmse(used.iter().map(|r| r.delta), reference.delta),
        });
        rows.extend(used);
    }
    Ok(BiasReport { reps: cfg.reps, k_frac: cfg.k_frac, seed: scenario.seed, by_n, rows })
}

// ---------------------------------------------------------------------
// Surface convergence
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaConfig {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub k_frac: f64,
    /// Evaluation grid for (x, y): `grid_points` equally spaced values
    /// over [grid_min, grid_max], squared.
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub policy: SingletonPolicy,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig {
            n_grid: vec![2_000, 20_000, 200_000],
            reps: 50,
            k_frac: 0.05,
            grid_min: 0.1,
            grid_max: 2.0,
            grid_points: 20,
            policy: SingletonPolicy::Drop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaRepRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    /// sup over the grid of |R̂(x, y) − R_pre(x, y)|.
    pub sup_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaRow {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    pub median_sup_error: f64,
    pub mean_sup_error: f64,
    pub max_sup_error: f64,
}

/// Uniform convergence of R̂ to its pre-limit surface as n grows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub reps: usize,
    pub k_frac: f64,
    pub seed: u64,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub by_n: Vec<LemmaRow>,
    #[serde(skip_serializing)]
    pub rows: Vec<LemmaRepRow>,
}

impl LemmaReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("n,rep,seed,sup_error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.n,
                r.rep,
                r.seed,
                format_float(r.sup_error)
            ));
        }
        out
    }
}

pub fn lemma_experiment(scenario: &Scenario, cfg: &LemmaConfig) -> Result<LemmaReport> {
    if cfg.reps == 0 || cfg.n_grid.is_empty() {
        return Err(Error::invalid("surface study needs replications and a sample-size grid"));
    }
    if cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sample-size grid must be strictly ascending"));
    }
    if !(cfg.grid_min > 0.0) || !(cfg.grid_max > cfg.grid_min) || cfg.grid_points < 2 {
        return Err(Error::invalid(
            "surface grid needs 0 < grid_min < grid_max and at least two points",
        ));
    }
    scenario.validate()?;

    let grid: Vec<f64> = (0..cfg.grid_points)
        .map(|i| {
            cfg.grid_min
                + (cfg.grid_max - cfg.grid_min) * i as f64 / (cfg.grid_points - 1) as f64
        })
        .collect();

    let mut by_n = Vec::new();
    let mut rows = Vec::new();
    for &n_target in &cfg.n_grid {
        let scaled = scenario.with_total_observations(n_target)?;
        let n = scaled.n_total();
        let k = ((cfg.k_frac * n as f64).round() as usize).clamp(2, n - 1);
        let oracle = TailOracle::new(&scaled)?;
        let reference = oracle.surface(k, &grid, &grid);
        let base = splitmix64(scaled.seed ^ (n as u64));

        let reps: Vec<LemmaRepRow> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| -> Result<LemmaRepRow> {
                let seed = rep_seed(base, rep as u64);
                let mut replication = scaled.clone();
                replication.seed = seed;
                let sim = replication.generate()?;
                let analysis = Analysis::new(sim.sample, cfg.policy, 100.0)?;
                let est: LambdaEstimator<'_> = analysis.lambda_estimator(k)?;
                let surface = est.surface(&grid, &grid);
                let sup_error = surface
                    .iter()
                    .zip(&reference)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                Ok(LemmaRepRow { n, rep, seed, sup_error })
            })
            .collect::<Result<_>>()?;

        let sups: Vec<f64> = reps.iter().map(|r| r.sup_error).collect();
        by_n.push(LemmaRow {
            n,
            k,
            reps: reps.len(),
            median_sup_error: lower_median(&sups),
            mean_sup_error: mean(sups.iter().copied()),
            max_sup_error: sups.iter().copied().fold(0.0, f64::max),
        });
        rows.extend(reps);
    }
    Ok(LemmaReport {
        reps: cfg.reps,
        k_frac: cfg.k_frac,
        seed: scenario.seed,
        grid_min: cfg.grid_min,
        grid_max: cfg.grid_max,
        grid_points: cfg.grid_points,
        by_n,
        rows,
    })
}
