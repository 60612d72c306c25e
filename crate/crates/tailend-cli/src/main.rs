//! Command-line front end for the `tailend` library.
//!
//! Every subcommand is a pure composition of library calls plus file
//! plumbing: artifacts land in `--out-dir`, a human-readable table of
//! the same values goes to stdout, and warnings go both to stderr and
//! into the JSON summary. Numbers are printed with shortest-round-trip
//! precision so the table, the JSON, and the CSVs never disagree.

// Flag checks are written `!(x > 0.0)` on purpose: the negation rejects
// NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Display;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tailend::{
    bias_experiment, coverage_experiment, format_float, homogeneous_reference, lemma_experiment,
    level_key, level_pct_label, paired_experiment, to_time, Analysis, BiasConfig, CoverageConfig,
    CsvSpec, DeltaMode, InferenceResult, LemmaConfig, PairedConfig, RecordTable, Scenario,
    SingletonPolicy, SpeedSample, VarianceReduction, Warning,
};

#[derive(Parser)]
#[command(
    name = "tailend",
    version,
    about = "Ultimate-record estimation from grouped performance data",
    propagate_version = true
)]
struct Cli {
    /// Directory output files are written into (created if missing).
    #[arg(long, global = true, env = "TAILEND_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    /// Overwrite existing output files instead of failing.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a CSV of recorded times into a grouped speed sample
    Prepare(PrepareArgs),
    /// One full endpoint inference at a single tail size
    Estimate(EstimateArgs),
    /// Inference at every k in a fraction range, with median summaries
    Sweep(SweepArgs),
    /// Heterogeneity curve plus its exact homogeneous reference
    Lambda(LambdaArgs),
    /// The two-argument dependence surface on a square grid
    Rsurface(RsurfaceArgs),
    /// Top speeds against transformed ranks, with the fitted line
    Extrapolate(ExtrapolateArgs),
    /// Run a validation experiment on a scenario file
    Simulate(SimulateArgs),
}

// ---------------------------------------------------------------------
// Shared argument bundles
// ---------------------------------------------------------------------

/// Flags shared by every subcommand that consumes a prepared sample.
#[derive(Args)]
struct SampleArgs {
    /// Prepared sample JSON (from `tailend prepare`)
    sample: PathBuf,

    /// How athletes with a single observation enter the dependence
    /// estimator
    #[arg(long, value_enum, default_value_t = PolicyArg::Drop)]
    policy: PolicyArg,

    /// Race distance in meters, for the time scale
    #[arg(long, default_value_t = 100.0)]
    distance: f64,
}

impl SampleArgs {
    fn load(&self) -> Result<Analysis> {
        let sample = SpeedSample::read_json(&self.sample)
            .with_context(|| format!("reading sample {}", self.sample.display()))?;
        Ok(Analysis::new(sample, self.policy.into(), self.distance)?)
    }

    fn input_label(&self) -> String {
        self.sample.display().to_string()
    }
}

/// Exactly one way of choosing the tail size (or neither, for the
/// documented default of 5% of n).
#[derive(Args)]
#[command(group = ArgGroup::new("tail-size").args(["k", "k_frac"]).multiple(false))]
struct KSelect {
    /// Absolute number of top order statistics
    #[arg(long)]
    k: Option<usize>,

    /// Tail fraction of n; k = round(frac * n) [default: 0.05]
    #[arg(long)]
    k_frac: Option<f64>,
}

impl KSelect {
    fn resolve(&self, analysis: &Analysis) -> Result<usize> {
        match (self.k, self.k_frac) {
            (Some(k), None) => Ok(k),
            (None, Some(frac)) => Ok(analysis.k_from_frac(frac)?),
            (None, None) => Ok(analysis.k_from_frac(0.05)?),
            (Some(_), Some(_)) => unreachable!("clap rejects conflicting selectors"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Drop,
    Duplicate,
}

impl From<PolicyArg> for SingletonPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Drop => SingletonPolicy::Drop,
            PolicyArg::Duplicate => SingletonPolicy::Duplicate,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DeltaModeArg {
    Corrected,
    Zero,
}

impl From<DeltaModeArg> for DeltaMode {
    fn from(m: DeltaModeArg) -> Self {
        match m {
            DeltaModeArg::Corrected => DeltaMode::Corrected,
            DeltaModeArg::Zero => DeltaMode::Zero,
        }
    }
}

// ---------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------

/// Serialized, overwrite-protected writes into the output directory.
struct OutDir {
    dir: PathBuf,
    force: bool,
    written: Vec<PathBuf>,
}

impl OutDir {
    fn new(dir: PathBuf, force: bool) -> Result<Self> {
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(OutDir { dir, force, written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        if path.exists() && !self.force {
            bail!("{} already exists; pass --force to overwrite", path.display());
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut json = serde_json::to_string_pretty(value)?;
        json.push('\n');
        self.write(name, &json)
    }

    fn print_files(&self) {
        println!("files");
        for p in &self.written {
            println!("  {}", p.display());
        }
    }
}

fn kv(label: &str, value: impl Display) {
    println!("  {label:<22} {value}");
}

fn report_warnings(warnings: &[Warning]) {
    for w in warnings {
        eprintln!("warning[{}]: {}", w.code, w.message);
    }
}

/// Comma-separated confidence levels, e.g. `0.75,0.95`.
fn parse_levels(raw: &str) -> Result<Vec<f64>> {
    let levels: Vec<f64> = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad level {s:?}")))
        .collect::<Result<_>>()?;
    if levels.is_empty() {
        bail!("at least one confidence level is required");
    }
    for &l in &levels {
        if !(0.0 < l && l < 1.0) {
            bail!("confidence level {l} must lie strictly between 0 and 1");
        }
    }
    Ok(levels)
}

/// `MIN:MAX` fraction pair, e.g. `0.03:0.07`.
fn parse_k_range(raw: &str) -> Result<(f64, f64)> {
    let (lo, hi) = raw
        .split_once(':')
        .with_context(|| format!("k range {raw:?} must look like MIN:MAX, e.g. 0.03:0.07"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("bad fraction {lo:?}"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("bad fraction {hi:?}"))?;
    Ok((lo, hi))
}

/// Comma-separated sample sizes, e.g. `2000,20000,200000`.
fn parse_n_grid(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad sample size {s:?}")))
        .collect()
}

/// One sweep-schema CSV row for a single inference.
fn inference_csv(result: &InferenceResult, levels: &[f64]) -> String {
    let mut header = String::from("k,gamma,endpoint_time,sigma2_iid,delta");
    for &level in levels {
        header.push_str(&format!(",lcb{}_time", level_pct_label(level)));
    }
    let mut row = format!(
        "{},{},{},{},{}",
        result.k,
        format_float(result.gamma),
        format_float(result.endpoint_time),
        format_float(result.sigma2_iid),
        format_float(result.delta)
    );
    for &level in levels {
        row.push_str(&format!(",{}", format_float(result.lcb_time[&level_key(level)])));
    }
    format!("{header}\n{row}\n")
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut out = OutDir::new(cli.out_dir, cli.force)?;
    match cli.command {
        Command::Prepare(args) => cmd_prepare(args, &mut out),
        Command::Estimate(args) => cmd_estimate(args, &mut out),
        Command::Sweep(args) => cmd_sweep(args, &mut out),
        Command::Lambda(args) => cmd_lambda(args, &mut out),
        Command::Rsurface(args) => cmd_rsurface(args, &mut out),
        Command::Extrapolate(args) => cmd_extrapolate(args, &mut out),
        Command::Simulate(args) => cmd_simulate(args, &mut out),
    }
}

// ---------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------

#[derive(Args)]
struct PrepareArgs {
    /// Input CSV of recorded times
    input: PathBuf,

    /// Keep at most this many (fastest) records per athlete
    #[arg(long, default_value_t = 5)]
    cap: usize,

    /// Rounding resolution of the recorded times, in seconds
    #[arg(long, default_value_t = 0.01)]
    resolution: f64,

    /// Race distance in meters
    #[arg(long, default_value_t = 100.0)]
    distance: f64,

    /// Header name of the athlete-id column
    #[arg(long, default_value = "athlete_id")]
    athlete_col: String,

    /// Header name of the time column
    #[arg(long, default_value = "time_s")]
    time_col: String,

    /// Header name of the optional wind column
    #[arg(long, default_value = "wind")]
    wind_col: String,

    /// Header name of the optional year column
    #[arg(long, default_value = "year")]
    year_col: String,
}

#[derive(Serialize)]
struct PrepareSummary {
    input: String,
    rows_read: usize,
    rows_kept: usize,
    cap: usize,
    resolution: f64,
    distance_m: f64,
    n: usize,
    p: usize,
    best_time_s: f64,
    slowest_time_s: f64,
    warnings: Vec<Warning>,
}

fn cmd_prepare(args: PrepareArgs, out: &mut OutDir) -> Result<()> {
    let spec = CsvSpec {
        athlete: args.athlete_col.clone(),
        time: args.time_col.clone(),
        wind: Some(args.wind_col.clone()),
        year: Some(args.year_col.clone()),
    };
    let table = RecordTable::from_csv_path(&args.input, &spec)?;
    let rows_read = table.len();
    let capped = table.cap_per_athlete(args.cap)?;
    let rows_kept = capped.len();

    // Best/slowest are quoted on the recorded times, before smoothing.
    let best = capped.rows().iter().map(|r| r.time_s).fold(f64::INFINITY, f64::min);
    let slowest = capped.rows().iter().map(|r| r.time_s).fold(f64::NEG_INFINITY, f64::max);

    let (smoothed, warnings) = capped.smooth_ties(args.resolution)?;
    let sample = smoothed.group(args.distance)?;
    report_warnings(&warnings);

    let summary = PrepareSummary {
        input: args.input.display().to_string(),
        rows_read,
        rows_kept,
        cap: args.cap,
        resolution: args.resolution,
        distance_m: args.distance,
        n: sample.n(),
        p: sample.p(),
        best_time_s: best,
        slowest_time_s: slowest,
        warnings,
    };

    out.write("sample.json", &sample.to_json_string()?)?;
    out.write_json("prepare_summary.json", &summary)?;

    println!("prepared sample");
    kv("rows read", summary.rows_read);
    kv("rows kept", summary.rows_kept);
    kv("athletes (p)", summary.p);
    kv("observations (n)", summary.n);
    kv("best time", format!("{} s", format_float(summary.best_time_s)));
    kv("slowest time", format!("{} s", format_float(summary.slowest_time_s)));
    out.print_files();
    Ok(())
}

// ---------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    sample: SampleArgs,

    #[command(flatten)]
    ksel: KSelect,

    /// Comma-separated one-sided confidence levels
    #[arg(long, default_value = "0.75,0.95")]
    levels: String,
}

#[derive(Serialize)]
struct EstimateSummary {
    input: String,
    n: usize,
    p: usize,
    policy: SingletonPolicy,
    distance_m: f64,
    levels: Vec<f64>,
    result: InferenceResult,
    variance_reduction: VarianceReduction,
    warnings: Vec<Warning>,
}

fn cmd_estimate(args: EstimateArgs, out: &mut OutDir) -> Result<()> {
    let levels = parse_levels(&args.levels)?;
    let analysis = args.sample.load()?;
    let k = args.ksel.resolve(&analysis)?;
    let (result, vr) = analysis.infer_at(k, &levels)?;
    let warnings = analysis.warnings().to_vec();
    report_warnings(&warnings);

    out.write("estimate.csv", &inference_csv(&result, &levels))?;
    let summary = EstimateSummary {
        input: args.sample.input_label(),
        n: analysis.n(),
        p: analysis.p(),
        policy: args.sample.policy.into(),
        distance_m: args.sample.distance,
        levels: levels.clone(),
        result,
        variance_reduction: vr,
        warnings,
    };
    out.write_json("estimate.json", &summary)?;

    let r = &summary.result;
    println!("estimate at k = {}", r.k);
    kv("gamma", format_float(r.gamma));
    kv("endpoint speed", format!("{} km/h", format_float(r.endpoint_speed)));
    kv("endpoint time", format!("{} s", format_float(r.endpoint_time)));
    kv("lambda(1)", format_float(summary.variance_reduction.lambda_at_1));
    kv("delta", format_float(r.delta));
    for &level in &levels {
        kv(
            &format!("lcb_time {}", level_key(level)),
            format!("{} s", format_float(r.lcb_time[&level_key(level)])),
        );
    }
    out.print_files();
    Ok(())
}

// ---------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    sample: SampleArgs,

    /// Fraction range MIN:MAX of n to sweep k over
    #[arg(long, default_value = "0.03:0.07")]
    k_range: String,

    /// Stride between consecutive k values
    #[arg(long, default_value_t = 1)]
    k_step: usize,

    /// Comma-separated one-sided confidence levels
    #[arg(long, default_value = "0.75,0.95")]
    levels: String,
}

#[derive(Serialize)]
struct SweepSummary {
    input: String,
    n: usize,
    p: usize,
    policy: SingletonPolicy,
    distance_m: f64,
    k_range: String,
    k_step: usize,
    levels: Vec<f64>,
    rows: usize,
    k_first: Option<usize>,
    k_last: Option<usize>,
    excluded_k: Vec<usize>,
    median_gamma: f64,
    median_endpoint_time: f64,
    median_lcb_time: std::collections::BTreeMap<String, f64>,
    warnings: Vec<Warning>,
}

fn cmd_sweep(args: SweepArgs, out: &mut OutDir) -> Result<()> {
    let levels = parse_levels(&args.levels)?;
    let (min_frac, max_frac) = parse_k_range(&args.k_range)?;
    let analysis = args.sample.load()?;
    let sweep = analysis.sweep(min_frac, max_frac, args.k_step, &levels)?;
    let mut warnings = analysis.warnings().to_vec();
    if !sweep.excluded_k.is_empty() {
        warnings.push(Warning::new(
            "excluded-k",
            format!("{} k value(s) had no finite-endpoint estimate", sweep.excluded_k.len()),
        ));
    }
    report_warnings(&warnings);

    out.write("sweep.csv", &sweep.to_csv())?;
    out.write("tail_fits.csv", &sweep.fits_csv())?;
    let summary = SweepSummary {
        input: args.sample.input_label(),
        n: analysis.n(),
        p: analysis.p(),
        policy: args.sample.policy.into(),
        distance_m: args.sample.distance,
        k_range: args.k_range.clone(),
        k_step: args.k_step,
        levels: levels.clone(),
        rows: sweep.rows.len(),
        k_first: sweep.rows.first().map(|r| r.k),
        k_last: sweep.rows.last().map(|r| r.k),
        excluded_k: sweep.excluded_k.clone(),
        median_gamma: sweep.median_gamma,
        median_endpoint_time: sweep.median_endpoint_time,
        median_lcb_time: sweep.median_lcb_time.clone(),
        warnings,
    };
    out.write_json("sweep_summary.json", &summary)?;

    println!(
        "sweep over k in {}..={} (step {}): {} rows, {} excluded",
        summary.k_first.map_or("-".into(), |k| k.to_string()),
        summary.k_last.map_or("-".into(), |k| k.to_string()),
        summary.k_step,
        summary.rows,
        summary.excluded_k.len()
    );
    kv("median gamma", format_float(summary.median_gamma));
    kv("median endpoint time", format!("{} s", format_float(summary.median_endpoint_time)));
    for (key, value) in &summary.median_lcb_time {
        kv(&format!("median lcb_time {key}"), format!("{} s", format_float(*value)));
    }
    out.print_files();
    Ok(())
}

// ---------------------------------------------------------------------
// lambda
// ---------------------------------------------------------------------

#[derive(Args)]
struct LambdaArgs {
    #[command(flatten)]
    sample: SampleArgs,

    #[command(flatten)]
    ksel: KSelect,

    /// Number of u grid points
    #[arg(long, default_value_t = 200)]
    grid: usize,

    /// Largest u on the grid
    #[arg(long, default_value_t = 1.0)]
    u_max: f64,
}

#[derive(Serialize)]
struct LambdaMeta {
    input: String,
    k: usize,
    n: usize,
    p: usize,
    policy: SingletonPolicy,
    grid_points: usize,
    u_max: f64,
    lambda_at_1: f64,
    reference_at_1: f64,
    warnings: Vec<Warning>,
}

fn cmd_lambda(args: LambdaArgs, out: &mut OutDir) -> Result<()> {
    if args.grid < 2 {
        bail!("--grid must be at least 2");
    }
    if !(args.u_max > 0.0) {
        bail!("--u-max must be positive");
    }
    let analysis = args.sample.load()?;
    let k = args.ksel.resolve(&analysis)?;
    let grid: Vec<f64> =
        (1..=args.grid).map(|i| args.u_max * i as f64 / args.grid as f64).collect();
    let curve = analysis.lambda_curve(k, &grid)?;
    let meta = curve.meta();
    let warnings = analysis.warnings().to_vec();
    report_warnings(&warnings);

    // The exact expectation of the same statistic under exchangeability,
    // on the same grid, for the same n and k.
    let mut reference = String::from("u,lambda_ref\n");
    for &u in curve.u_grid() {
        reference.push_str(&format!(
            "{},{}\n",
            format_float(u),
            format_float(homogeneous_reference(meta.n, meta.k, u))
        ));
    }

    out.write("lambda.csv", &curve.to_csv())?;
    out.write("lambda_reference.csv", &reference)?;
    let meta_doc = LambdaMeta {
        input: args.sample.input_label(),
        k: meta.k,
        n: meta.n,
        p: meta.p,
        policy: args.sample.policy.into(),
        grid_points: args.grid,
        u_max: args.u_max,
        lambda_at_1: meta.lambda_at_1,
        reference_at_1: homogeneous_reference(meta.n, meta.k, 1.0),
        warnings,
    };
    out.write_json("lambda_meta.json", &meta_doc)?;

    println!(
        "lambda curve at k = {} (n = {}, p = {} after singleton policy)",
        meta.k, meta.n, meta.p
    );
    kv("lambda(1)", format_float(meta_doc.lambda_at_1));
    kv("reference(1)", format_float(meta_doc.reference_at_1));
    out.print_files();
    Ok(())
}

// ---------------------------------------------------------------------
// rsurface
// ---------------------------------------------------------------------

#[derive(Args)]
struct RsurfaceArgs {
    #[command(flatten)]
    sample: SampleArgs,

    #[command(flatten)]
    ksel: KSelect,

    /// Grid points per axis
    #[arg(long, default_value_t = 20)]
    grid: usize,

    /// Smallest grid coordinate
    #[arg(long, default_value_t = 0.1)]
    grid_min: f64,

    /// Largest grid coordinate
    #[arg(long, default_value_t = 2.0)]
    grid_max: f64,
}

#[derive(Serialize)]
struct RsurfaceMeta {
    input: String,
    k: usize,
    n: usize,
    p: usize,
    policy: SingletonPolicy,
    grid_points: usize,
    grid_min: f64,
    grid_max: f64,
    warnings: Vec<Warning>,
}

fn cmd_rsurface(args: RsurfaceArgs, out: &mut OutDir) -> Result<()> {
    if args.grid < 2 {
        bail!("--grid must be at least 2");
    }
    if !(args.grid_min > 0.0) || !(args.grid_max > args.grid_min) {
        bail!("need 0 < --grid-min < --grid-max");
    }
    let analysis = args.sample.load()?;
    let k = args.ksel.resolve(&analysis)?;
    let est = analysis.lambda_estimator(k)?;
    let grid: Vec<f64> = (0..args.grid)
        .map(|i| {
            args.grid_min
                + (args.grid_max - args.grid_min) * i as f64 / (args.grid - 1) as f64
        })
        .collect();
    let values = est.surface(&grid, &grid);
    let (n, p) = (est.n(), analysis.prepared().p());
    let warnings = analysis.warnings().to_vec();
    report_warnings(&warnings);

    let mut csv = String::from("x,y,r_hat\n");
    for (i, &x) in grid.iter().enumerate() {
        for (j, &y) in grid.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{}\n",
                format_float(x),
                format_float(y),
                format_float(values[i * grid.len() + j])
            ));
        }
    }

    out.write("rsurface.csv", &csv)?;
    let meta = RsurfaceMeta {
        input: args.sample.input_label(),
        k,
        n,
        p,
        policy: args.sample.policy.into(),
        grid_points: args.grid,
        grid_min: args.grid_min,
        grid_max: args.grid_max,
        warnings,
    };
    out.write_json("rsurface_meta.json", &meta)?;

    println!(
        "r surface at k = {}: {} x {} grid on [{}, {}]^2",
        k,
        args.grid,
        args.grid,
        format_float(args.grid_min),
        format_float(args.grid_max)
    );
    out.print_files();
    Ok(())
}

// ---------------------------------------------------------------------
// extrapolate
// ---------------------------------------------------------------------

#[derive(Args)]
struct ExtrapolateArgs {
    #[command(flatten)]
    sample: SampleArgs,

    #[command(flatten)]
    ksel: KSelect,

    /// Number of top ranks in the series
    #[arg(long, default_value_t = 100)]
    max_rank: usize,
}

#[derive(Serialize)]
struct ExtrapolateMeta {
    slope: f64,
    intercept: f64,
    gamma: f64,
    k: usize,
    max_rank: usize,
    endpoint_time: f64,
    input: String,
    warnings: Vec<Warning>,
}

fn cmd_extrapolate(args: ExtrapolateArgs, out: &mut OutDir) -> Result<()> {
    let analysis = args.sample.load()?;
    let k = args.ksel.resolve(&analysis)?;
    let series = analysis.extrapolation(k, args.max_rank)?;
    let warnings = analysis.warnings().to_vec();
    report_warnings(&warnings);

    out.write("extrapolation.csv", &series.to_csv())?;
    let meta = ExtrapolateMeta {
        slope: series.slope,
        intercept: series.intercept,
        gamma: series.gamma,
        k: series.k,
        max_rank: args.max_rank,
        endpoint_time: to_time(series.intercept, args.sample.distance)?,
        input: args.sample.input_label(),
        warnings,
    };
    out.write_json("extrapolation_meta.json", &meta)?;

    println!("extrapolation at k = {}", meta.k);
    kv("gamma", format_float(meta.gamma));
    kv("intercept", format!("{} km/h (endpoint)", format_float(meta.intercept)));
    kv("endpoint time", format!("{} s", format_float(meta.endpoint_time)));
    kv("slope", format_float(meta.slope));
    out.print_files();
    Ok(())
}

// ---------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExperimentArg {
    Coverage,
    Paired,
    Bias,
    Lemma,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON describing the synthetic population
    scenario: PathBuf,

    /// Which validation study to run
    #[arg(long, value_enum)]
    experiment: ExperimentArg,

    /// Base RNG seed (overrides the scenario file's seed)
    #[arg(long)]
    seed: Option<u64>,

    /// Number of replications (experiment-specific default otherwise)
    #[arg(long)]
    reps: Option<usize>,

    /// Tail fraction per replication
    #[arg(long, default_value_t = 0.05)]
    k_frac: f64,

    /// Comma-separated levels (coverage only)
    #[arg(long)]
    levels: Option<String>,

    /// Single level (paired only)
    #[arg(long, default_value_t = 0.95)]
    level: f64,

    /// Bound mode (coverage only)
    #[arg(long, value_enum, default_value_t = DeltaModeArg::Corrected)]
    delta_mode: DeltaModeArg,

    /// Comma-separated total observation counts (bias and lemma only)
    #[arg(long)]
    n_grid: Option<String>,

    /// Singleton handling inside each replication
    #[arg(long, value_enum, default_value_t = PolicyArg::Drop)]
    policy: PolicyArg,

    /// Race distance in meters, for the time scale
    #[arg(long, default_value_t = 100.0)]
    distance: f64,
}

#[derive(Serialize)]
struct SimulateSummary<T: Serialize> {
    experiment: String,
    scenario: String,
    seed: u64,
    report: T,
    warnings: Vec<Warning>,
}

fn cmd_simulate(args: SimulateArgs, out: &mut OutDir) -> Result<()> {
    let mut scenario = Scenario::from_json_path(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let seed = scenario.seed;
    let scenario_label = args.scenario.display().to_string();

    match args.experiment {
        ExperimentArg::Coverage => {
            let mut cfg = CoverageConfig {
                k_frac: args.k_frac,
                policy: args.policy.into(),
                delta_mode: args.delta_mode.into(),
                distance_m: args.distance,
                ..CoverageConfig::default()
            };
            if let Some(reps) = args.reps {
                cfg.reps = reps;
            }
            if let Some(levels) = &args.levels {
                cfg.levels = parse_levels(levels)?;
            }
            let report = coverage_experiment(&scenario, &cfg)?;

            out.write("coverage_reps.csv", &report.rows_csv())?;
            println!(
                "coverage: {} replications, k-frac {}, delta {}",
                report.reps,
                format_float(report.k_frac),
                match cfg.delta_mode {
                    DeltaMode::Corrected => "corrected",
                    DeltaMode::Zero => "zero",
                }
            );
            for &level in &cfg.levels {
                let key = level_key(level);
                kv(
                    &format!("level {key}"),
                    format!(
                        "coverage {} (se {})",
                        format_float(report.coverage[&key]),
                        format_float(report.binomial_se[&key])
                    ),
                );
            }
            kv("failures", report.failures);
            let summary = SimulateSummary {
                experiment: "coverage".into(),
                scenario: scenario_label,
                seed,
                report,
                warnings: Vec::new(),
            };
            out.write_json("coverage_summary.json", &summary)?;
        }
        ExperimentArg::Paired => {
            let mut cfg = PairedConfig {
                level: args.level,
                k_frac: args.k_frac,
                policy: args.policy.into(),
                distance_m: args.distance,
                ..PairedConfig::default()
            };
            if let Some(reps) = args.reps {
                cfg.reps = reps;
            }
            let report = paired_experiment(&scenario, &cfg)?;

            out.write("paired_reps.csv", &report.rows_csv())?;
            println!(
                "paired bounds: {} replications at level {}, k-frac {}",
                report.reps,
                format_float(report.level),
                format_float(report.k_frac)
            );
            kv("fraction tighter", format_float(report.fraction_tighter));
            kv("coverage corrected", format_float(report.coverage_corrected));
            kv("coverage independence", format_float(report.coverage_iid));
            kv("failures", report.failures);
            let summary = SimulateSummary {
                experiment: "paired".into(),
                scenario: scenario_label,
                seed,
                report,
                warnings: Vec::new(),
            };
            out.write_json("paired_summary.json", &summary)?;
        }
        ExperimentArg::Bias => {
            let mut cfg = BiasConfig {
                k_frac: args.k_frac,
                policy: args.policy.into(),
                distance_m: args.distance,
                ..BiasConfig::default()
            };
            if let Some(reps) = args.reps {
                cfg.reps = reps;
            }
            if let Some(n_grid) = &args.n_grid {
                cfg.n_grid = parse_n_grid(n_grid)?;
            }
            let report = bias_experiment(&scenario, &cfg)?;

            out.write("bias_reps.csv", &report.rows_csv())?;
            println!(
                "bias study: {} replications per size, k-frac {}",
                report.reps,
                format_float(report.k_frac)
            );
            for row in &report.by_n {
                kv(
                    &format!("n {}", row.n),
                    format!(
                        "rmse gamma {} endpoint {} lambda1 {} delta {}",
                        format_float(row.rmse_gamma),
                        format_float(row.rmse_endpoint_speed),
                        format_float(row.rmse_lambda_at_1),
                        format_float(row.rmse_delta)
                    ),
                );
            }
            let summary = SimulateSummary {
                experiment: "bias".into(),
                scenario: scenario_label,
                seed,
                report,
                warnings: Vec::new(),
            };
            out.write_json("bias_summary.json", &summary)?;
        }
        ExperimentArg::Lemma => {
            let mut cfg = LemmaConfig { k_frac: args.k_frac, policy: args.policy.into(), ..LemmaConfig::default() };
            if let Some(reps) = args.reps {
                cfg.reps = reps;
            }
            if let Some(n_grid) = &args.n_grid {
                cfg.n_grid = parse_n_grid(n_grid)?;
            }
            let report = lemma_experiment(&scenario, &cfg)?;

            out.write("lemma_reps.csv", &report.rows_csv())?;
            println!(
                "surface convergence: {} replications per size, k-frac {}",
                report.reps,
                format_float(report.k_frac)
            );
            for row in &report.by_n {
                kv(
                    &format!("n {}", row.n),
                    format!("median sup-error {}", format_float(row.median_sup_error)),
                );
            }
            let summary = SimulateSummary {
                experiment: "lemma".into(),
                scenario: scenario_label,
                seed,
                report,
                warnings: Vec::new(),
            };
            out.write_json("lemma_summary.json", &summary)?;
        }
    }
    out.print_files();
    Ok(())
}
