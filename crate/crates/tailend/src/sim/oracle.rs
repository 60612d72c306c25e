//! The pre-limit oracle: what λ̂ and R̂ are actually estimating at a
//! finite (n, k), computed from a scenario's true distributions rather
//! than from data.
//!
//! Writing `T̄(q)` for the observation-weighted average survival
//! function and `q_s = T̄⁻¹(s)`, the oracle evaluates
//!
//! ```text
//! r(x, y; k) = (1/k) Σ_g w_g · P_g(kx/n) · P_g(ky/n),
//! P_g(s)     = P(X_g > q_s)
//! ```
//!
//! where `w_g` counts the observations drawn from group g. This is the
//! exact expectation structure the empirical counts converge to, so
//! estimator-vs-oracle gaps measure pure sampling noise plus the O(1/n)
//! discretization of ranks — nothing model-side.

use serde::Serialize;

use crate::error::Result;
use crate::heterogeneity::{HeterogeneityCurve, VarianceReduction};
use crate::sim::{AthleteGroup, MSpec, Scenario};

/// Bisection width for inverting the average survival function.
const QUANTILE_TOLERANCE: f64 = 1e-12;

/// Grid density used when integrating the oracle λ for m_λ and Δ.
pub const ORACLE_GRID_POINTS: usize = 4_000;

#[derive(Debug, Clone)]
pub struct TailOracle {
    /// (observation count, tail) per group.
    groups: Vec<(f64, AthleteGroup)>,
    n: usize,
    p: usize,
    /// Support bounds bracketing every group.
    lo: f64,
    hi: f64,
}

impl TailOracle {
    pub fn new(scenario: &Scenario) -> Result<TailOracle> {
        scenario.validate()?;
        let mut groups = Vec::new();
        let mut athlete = 0usize;
        for group in scenario.family.groups() {
            let obs: usize = match &scenario.m {
                MSpec::Constant(m) => m * group.athletes,
                MSpec::PerAthlete(list) => {
                    list[athlete..athlete + group.athletes].iter().sum()
                }
            };
            athlete += group.athletes;
            groups.push((obs as f64, group.clone()));
        }
        let lo = groups
            .iter()
            .map(|(_, g)| g.endpoint - g.width)
            .fold(f64::INFINITY, f64::min);
        let hi = groups
            .iter()
            .map(|(_, g)| g.endpoint)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(TailOracle { groups, n: scenario.n_total(), p: scenario.p, lo, hi })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// One group's survival function P(X > q).
    fn survival(group: &AthleteGroup, q: f64) -> f64 {
        if q >= group.endpoint {
            0.0
        } else if q <= group.endpoint - group.width {
            1.0
        } else {
            ((group.endpoint - q) / group.width).powf(-1.0 / group.gamma)
        }
    }

    /// The observation-weighted average survival T̄(q) = P(X > q) for an
    /// observation drawn uniformly from the population.
    pub fn average_survival(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for (w, g) in &self.groups {
            acc += w * Self::survival(g, q);
        }
        acc / self.n as f64
    }

    /// The upper quantile: a q with T̄(q) = s, for s in (0, 1). Over
    /// flat stretches of T̄ (support gaps) any point of the stretch is
    /// equivalent — no group has mass there.
    pub fn tail_quantile(&self, s: f64) -> f64 {
        debug_assert!(s > 0.0 && s < 1.0);
        let (mut lo, mut hi) = (self.lo, self.hi);
        // Invariant: T̄(lo) >= s >= T̄(hi).
        while hi - lo > QUANTILE_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if self.average_survival(mid) >= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// P_g(s) for every group: the probability that an observation from
    /// group g lands above the population's upper-s quantile.
    pub fn exceedance_probs(&self, s: f64) -> Vec<f64> {
        if s >= 1.0 {
            return vec![1.0; self.groups.len()];
        }
        if s <= 0.0 {
            return vec![0.0; self.groups.len()];
        }
        let q = self.tail_quantile(s);
        self.groups.iter().map(|(_, g)| Self::survival(g, q)).collect()
    }

    fn combine(&self, k: usize, px: &[f64], py: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((w, _), (p1, p2)) in self.groups.iter().zip(px.iter().zip(py)) {
            // The pair product first, so swapping the arguments is
            // bit-exact (float multiplication commutes; association
            // with w would not).
            acc += w * (p1 * p2);
        }
        acc / k as f64
    }

    /// The pre-limit R(x, y; k).
    pub fn r_at(&self, k: usize, x: f64, y: f64) -> f64 {
        let n = self.n as f64;
        let px = self.exceedance_probs(k as f64 * x / n);
        let py = self.exceedance_probs(k as f64 * y / n);
        self.combine(k, &px, &py)
    }

    /// The pre-limit λ(u; k) = R(1, 1/u; k).
    pub fn lambda_at(&self, k: usize, u: f64) -> f64 {
        self.r_at(k, 1.0, 1.0 / u)
    }

    /// λ(·; k) on a grid, as a curve ready for quadrature or plotting.
    pub fn curve(&self, k: usize, u_grid: &[f64]) -> Result<HeterogeneityCurve> {
        let n = self.n as f64;
        let px = self.exceedance_probs(k as f64 / n);
        let values: Vec<f64> = u_grid
            .iter()
            .map(|&u| {
                let py = self.exceedance_probs(k as f64 / (n * u));
                self.combine(k, &px, &py)
            })
            .collect();
        HeterogeneityCurve::new(
            k,
            self.n,
            self.p,
            u_grid.to_vec(),
            values,
            self.lambda_at(k, 1.0),
        )
    }

    /// R(·, ·; k) on a rectangular grid, row-major over `xs` then `ys`,
    /// with exceedance probabilities computed once per grid coordinate.
    pub fn surface(&self, k: usize, xs: &[f64], ys: &[f64]) -> Vec<f64> {
        let n = self.n as f64;
        let kf = k as f64;
        let px: Vec<Vec<f64>> =
            xs.iter().map(|&x| self.exceedance_probs(kf * x / n)).collect();
        let py: Vec<Vec<f64>> =
            ys.iter().map(|&y| self.exceedance_probs(kf * y / n)).collect();
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for p1 in &px {
            for p2 in &py {
                out.push(self.combine(k, p1, p2));
            }
        }
        out
    }

    /// m_λ(x; k) by exact-weight quadrature of the oracle curve on a
    /// uniform grid of `grid_points` points over (0, 1].
    pub fn m_lambda(&self, k: usize, x: f64, grid_points: usize) -> Result<f64> {
        let grid: Vec<f64> =
            (1..=grid_points).map(|i| i as f64 / grid_points as f64).collect();
        self.curve(k, &grid)?.m_lambda(x)
    }

    /// The pre-limit variance-reduction factor Δ(γ; k), integrating the
    /// oracle λ on an `ORACLE_GRID_POINTS`-point uniform grid over (0, 1].
    pub fn delta(&self, k: usize, gamma: f64) -> Result<VarianceReduction> {
        let grid: Vec<f64> = (1..=ORACLE_GRID_POINTS)
            .map(|i| i as f64 / ORACLE_GRID_POINTS as f64)
            .collect();
        self.curve(k, &grid)?.variance_reduction(gamma)
    }
}

/// Reference values for one (scenario, k): everything the estimators
/// are compared against in bias studies.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleReference {
    pub endpoint_speed: f64,
    pub gamma: f64,
    pub lambda_at_1: f64,
    pub delta: f64,
}

impl OracleReference {
    pub fn compute(scenario: &Scenario, k: usize) -> Result<OracleReference> {
        let truth = scenario.truth();
        let oracle = TailOracle::new(scenario)?;
        let delta = oracle.delta(k, truth.gamma)?;
        Ok(OracleReference {
            endpoint_speed: truth.endpoint_speed,
            gamma: truth.gamma,
            lambda_at_1: oracle.lambda_at(k, 1.0),
            delta: delta.delta,
        })
    }
}
