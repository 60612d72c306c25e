//! Synthetic grouped samples with known tails, the pre-limit oracle for
//! the heterogeneity functionals, and Monte Carlo experiments.
//!
//! A [`Scenario`] describes a population of athletes split into groups;
//! each group draws from a reverse-Weibull tail `x*, γ, w`:
//! `X = x* − w·U^(−γ)` with `U` uniform on (0, 1), so
//! `P(X > x) = ((x* − x)/w)^(−1/γ)` near the endpoint. Generation is
//! deterministic in `(scenario, seed)` and — because every athlete owns
//! a private, index-keyed stream — unchanged athletes keep their exact
//! observations when other parts of a scenario change.

pub mod brute;
mod experiments;
mod oracle;

pub use experiments::{
    bias_experiment, coverage_experiment, lemma_experiment, paired_experiment, BiasConfig,
    BiasReport, BiasRow, CoverageConfig, CoverageReport, CoverageRow, DeltaMode, LemmaConfig,
    LemmaReport, LemmaRow, PairedConfig, PairedReport, PairedRow,
};
pub use oracle::TailOracle;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::ingest::{enforce_distinct, to_time, SpeedSample};

/// Default seed used when a scenario file does not name one.
pub const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Observations per athlete: one count for everybody, or an explicit
/// per-athlete list (athlete order follows the group layout).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MSpec {
    Constant(usize),
    PerAthlete(Vec<usize>),
}

/// A block of athletes sharing one reverse-Weibull tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AthleteGroup {
    pub athletes: usize,
    /// Right endpoint of the group's support (a speed).
    pub endpoint: f64,
    /// Tail index; must be negative.
    pub gamma: f64,
    /// Support width: observations land in (endpoint − width, endpoint).
    pub width: f64,
}

/// The distribution family of a scenario. Only reverse-Weibull groups
/// exist today; the tag keeps scenario files forward-compatible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Family {
    ReverseWeibull { groups: Vec<AthleteGroup> },
}

impl Family {
    pub fn groups(&self) -> &[AthleteGroup] {
        match self {
            Family::ReverseWeibull { groups } => groups,
        }
    }
}

/// What the estimators are trying to recover: the highest endpoint in
/// the population, and the tail index governing the limit (the smallest
/// — heaviest-tailed — γ among groups attaining that endpoint).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub endpoint_speed: f64,
    pub gamma: f64,
}

impl GroundTruth {
    /// The ultimate record on the time scale.
    pub fn ultimate_time(&self, distance_m: f64) -> Result<f64> {
        to_time(self.endpoint_speed, distance_m)
    }
}

/// A complete recipe for one synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Total number of athletes; must equal the sum of group sizes.
    pub p: usize,
    /// Observations per athlete.
    pub m: MSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub family: Family,
}

impl Scenario {
    pub fn from_json_str(json: &str) -> Result<Scenario> {
        let scenario: Scenario = serde_json::from_str(json)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_json_path(path: impl AsRef<std::path::Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Scenario::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let groups = self.family.groups();
        if groups.is_empty() {
            return Err(Error::scenario("a scenario needs at least one group"));
        }
        let mut total = 0usize;
        for (g, group) in groups.iter().enumerate() {
            if group.athletes == 0 {
                return Err(Error::scenario(format!("group {g} has no athletes")));
            }
            if !group.gamma.is_finite() || group.gamma >= 0.0 {
                return Err(Error::scenario(format!(
                    "group {g} needs a negative tail index, got {}",
                    group.gamma
                )));
            }
            if !group.width.is_finite() || group.width <= 0.0 {
                return Err(Error::scenario(format!(
                    "group {g} needs a positive width, got {}",
                    group.width
                )));
            }
            if !group.endpoint.is_finite() || group.endpoint - group.width <= 0.0 {
                return Err(Error::scenario(format!(
                    "group {g} support must stay positive: endpoint {} minus width {} does not",
                    group.endpoint, group.width
                )));
            }
            total += group.athletes;
        }
        if total != self.p {
            return Err(Error::scenario(format!(
                "p = {} but the groups hold {total} athletes",
                self.p
            )));
        }
        match &self.m {
            MSpec::Constant(m) => {
                if *m == 0 {
                    return Err(Error::scenario("athletes need at least one observation"));
                }
            }
            MSpec::PerAthlete(list) => {
                if list.len() != self.p {
                    return Err(Error::scenario(format!(
                        "per-athlete counts list {} athletes but p = {}",
                        list.len(),
                        self.p
                    )));
                }
                if list.contains(&0) {
                    return Err(Error::scenario("athletes need at least one observation"));
                }
            }
        }
        Ok(())
    }

    /// Observations of athlete `index` (0-based, in group layout order).
    pub fn m_of(&self, index: usize) -> usize {
        match &self.m {
            MSpec::Constant(m) => *m,
            MSpec::PerAthlete(list) => list[index],
        }
    }

    /// Total observation count n.
    pub fn n_total(&self) -> usize {
        match &self.m {
            MSpec::Constant(m) => m * self.p,
            MSpec::PerAthlete(list) => list.iter().sum(),
        }
    }

    pub fn truth(&self) -> GroundTruth {
        let groups = self.family.groups();
        let endpoint = groups
            .iter()
            .map(|g| g.endpoint)
            .fold(f64::NEG_INFINITY, f64::max);
        let gamma = groups
            .iter()
            .filter(|g| g.endpoint == endpoint)
            .map(|g| g.gamma)
            .fold(f64::INFINITY, f64::min);
        GroundTruth { endpoint_speed: endpoint, gamma }
    }

    /// A copy rescaled so the total observation count is approximately
    /// `n`, keeping group proportions (the last group absorbs rounding
    /// drift). Only defined for constant per-athlete counts.
    pub fn with_total_observations(&self, n: usize) -> Result<Scenario> {
        let m = match &self.m {
            MSpec::Constant(m) => *m,
            MSpec::PerAthlete(_) => {
                return Err(Error::scenario(
                    "rescaling needs a constant per-athlete observation count",
                ))
            }
        };
        let groups = self.family.groups();
        let p_target = ((n as f64 / m as f64).round() as usize).max(groups.len());
        let scale = p_target as f64 / self.p as f64;
        let mut new_groups = groups.to_vec();
        let mut assigned = 0usize;
        for (g, group) in new_groups.iter_mut().enumerate() {
            if g + 1 < groups.len() {
                group.athletes = ((group.athletes as f64 * scale).round() as usize).max(1);
                assigned += group.athletes;
            } else {
                if assigned + 1 > p_target {
                    return Err(Error::scenario(format!(
                        "cannot rescale to {n} observations: group proportions leave no room \
                         for group {g}"
                    )));
                }
                group.athletes = p_target - assigned;
            }
        }
        let scenario = Scenario {
            p: p_target,
            m: MSpec::Constant(m),
            seed: self.seed,
            family: Family::ReverseWeibull { groups: new_groups },
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Draws the sample. Deterministic in `(self, seed)`: athlete `i`
    /// consumes exactly the stream `ChaCha8(seed XOR i)`, so reruns are
    /// byte-identical and insertions elsewhere in the scenario leave an
    /// athlete's observations untouched.
    pub fn generate(&self) -> Result<SimulatedSample> {
        self.validate()?;
        let n = self.n_total();
        let mut values = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(self.p);
        let mut sizes = Vec::with_capacity(self.p);
        let mut athlete: u64 = 0;
        for group in self.family.groups() {
            for _ in 0..group.athletes {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ athlete);
                let m = self.m_of(athlete as usize);
                offsets.push(values.len());
                sizes.push(m);
                for _ in 0..m {
                    let u: f64 = rng.sample(Open01);
                    values.push(group.endpoint - group.width * u.powf(-group.gamma));
                }
                athlete += 1;
            }
        }
        let mut warnings = Vec::new();
        let bumps = enforce_distinct(&mut values);
        if bumps > 0 {
            warnings.push(Warning::new(
                "simulated-ties",
                format!("{bumps} simulated value(s) collided and were nudged up by one ulp"),
            ));
        }
        Ok(SimulatedSample {
            sample: SpeedSample::new(values, offsets, sizes)?,
            truth: self.truth(),
            warnings,
        })
    }
}

/// A generated sample together with the scenario's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSample {
    pub sample: SpeedSample,
    pub truth: GroundTruth,
    pub warnings: Vec<Warning>,
}

/// The splitmix64 output function: the standard seed sequencer, used to
/// derive independent per-replication seeds from a base seed.
pub(crate) fn splitmix64(index: u64) -> u64 {
    let mut z = index.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `rep` of an experiment with base seed `base`:
/// element `rep` of the splitmix64 stream started at `base`, then pushed
/// away from the identity so `rep_seed(s, 0) != s`.
pub(crate) fn rep_seed(base: u64, rep: u64) -> u64 {
    splitmix64(base.wrapping_add(rep.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}
