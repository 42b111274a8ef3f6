use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::report::{write_csv_file, Summary};
use super::settings::ExperimentConfig;
use crate::analytics::{extinction_criterion, speed_mass_with, ScaleProfile};
use crate::error::{Error, Result};
use crate::quad::QuadratureConfig;
use crate::rng::derive_seed;
use crate::stats::{chi_square, TestResult};
use crate::virgin_island::{
    bin_counts, excursion_area_estimate, q_mass_estimate, IdentityEstimate, SplittingConfig, TreeBuilder, TreeConfig,
};

const AREA_STREAM: u64 = 30;
const HIT_STREAM: u64 = 31;
const SNAPSHOT_STREAM: u64 = 32;
/// Largest relative gap accepted for the two Monte Carlo identities.
pub const IDENTITY_TOLERANCE: f64 = 0.05;
/// Significance level of the speed-measure χ² test.
pub const SNAPSHOT_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub target: f64,
    pub estimate: IdentityEstimate,
    pub relative_gap: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(target: f64, estimate: IdentityEstimate) -> Self {
        let relative_gap = (estimate.estimate.mean - target).abs() / target;
        Self { target, estimate, relative_gap, passed: relative_gap < IDENTITY_TOLERANCE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotCheck {
    pub edges: Vec<f64>,
    pub replicates: usize,
    pub observed: Vec<f64>,
    /// `replicates · m([lo, hi))`.
    pub expected: Vec<f64>,
    pub test: TestResult,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    /// Quadrature `Θ` against `(1/S(ε)) E^ε ∫Y`.
    pub area: IdentityCheck,
    /// `1/S(δ)` against `N · P^{1/N}(sup Y ≥ δ)`.
    pub q_mass: IdentityCheck,
    /// Immigrant excursions at a fixed time against the speed measure.
    pub snapshot: SnapshotCheck,
    pub summary: Summary,
}

impl IdentityReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "identity,target,estimate,se,relative_gap,passed")?;
        for (name, c) in [("excursion_area", &self.area), ("q_mass", &self.q_mass)] {
            let e = c.estimate.estimate;
            writeln!(out, "{name},{},{},{},{},{}", c.target, e.mean, e.se, c.relative_gap, c.passed)?;
        }
        Ok(())
    }

    pub fn write_snapshot_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let s = &self.snapshot;
        writeln!(out, "bin_lo,bin_hi,observed,expected")?;
        for i in 0..s.observed.len() {
            writeln!(out, "{},{},{},{}", s.edges[i], s.edges[i + 1], s.observed[i], s.expected[i])?;
        }
        Ok(())
    }
}

/// Points `{η_{t−s}}` of a rate-1 immigration of excursions, observed at the
/// end of a window long enough for the process to be stationary, binned and
/// compared with the speed measure.
fn speed_snapshot(cfg: &ExperimentConfig, replicates: usize, q: &QuadratureConfig) -> Result<SnapshotCheck> {
    let id = &cfg.identity;
    let edges = id.bins.clone();
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) || edges[0] <= 0.0 {
        return Err(Error::Config("`identity.bins` must be positive and increasing".into()));
    }
    let mut tcfg = TreeConfig::new(1.0, cfg.delta.min(edges[0]), id.window, cfg.dt);
    tcfg.generation_cap = 0;
    let builder = TreeBuilder::new(&cfg.spec, tcfg)?;
    let counts: Vec<Vec<u64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let tree = builder.build(&[], derive_seed(cfg.seed, &[SNAPSHOT_STREAM, r]))?;
            Ok(bin_counts(tree.masses_at(id.window)?, &edges))
        })
        .collect::<Result<_>>()?;
    let mut observed = vec![0.0; edges.len() - 1];
    for c in &counts {
        for (o, &k) in observed.iter_mut().zip(c) {
            *o += k as f64;
        }
    }
    let profile = ScaleProfile::new(&cfg.spec, q)?;
    let expected = edges
        .windows(2)
        .map(|w| Ok(replicates as f64 * speed_mass_with(&profile, w[0], w[1], q)?))
        .collect::<Result<Vec<_>>>()?;
    let test = chi_square(&observed, &expected, 0);
    Ok(SnapshotCheck { edges, replicates, observed, expected, passed: test.p_value > SNAPSHOT_LEVEL, test })
}

/// Monte Carlo checks of the excursion-area identity, the `Q`-mass identity
/// and the speed-measure relation. The Monte Carlo budget is `replicates`
/// for the first two and at most `loop_free_replicates` for the snapshot.
pub fn run_identity_suite(cfg: &ExperimentConfig) -> Result<IdentityReport> {
    cfg.validate()?;
    let validation = cfg.spec.validate_assumptions(200);
    if !validation.all_passed() {
        let names: Vec<_> = validation.failures().map(|c| c.name).collect();
        return Err(Error::Config(format!("spec fails validation: {}", names.join(", "))));
    }
    let q = QuadratureConfig::default();
    let id = &cfg.identity;

    let theta = extinction_criterion(&cfg.spec, &q)?;
    let area_cfg =
        SplittingConfig { dt: id.area_dt, max_time: id.max_time, split_cap: id.split_cap, ..Default::default() };
    let area_mc =
        excursion_area_estimate(&cfg.spec, id.eps, &area_cfg, cfg.replicates, derive_seed(cfg.seed, &[AREA_STREAM]))?;
    let area = IdentityCheck::new(theta, area_mc);

    let inv_s = 1.0 / ScaleProfile::new(&cfg.spec, &q)?.scale(id.q_delta, &q)?;
    let hit_cfg = SplittingConfig { dt: id.q_dt, max_time: id.max_time, ..Default::default() };
    let hit_mc =
        q_mass_estimate(&cfg.spec, id.q_n, id.q_delta, &hit_cfg, cfg.replicates, derive_seed(cfg.seed, &[HIT_STREAM]))?;
    let q_mass = IdentityCheck::new(inv_s, hit_mc);

    let snapshot = speed_snapshot(cfg, cfg.replicates.min(cfg.loop_free_replicates).max(2), &q)?;

    let mut summary = Summary::new("identities", cfg);
    summary
        .metric("excursion_area", area)
        .metric("q_mass", q_mass)
        .metric("speed_snapshot", &snapshot)
        .verdict("excursion area within 5%", area.passed)
        .verdict("q mass within 5%", q_mass.passed)
        .verdict("speed measure chi-square not rejected at 1%", snapshot.passed);
    let report = IdentityReport { area, q_mass, snapshot, summary };
    if let Some(dir) = &cfg.out_dir {
        write_csv_file(dir, "identities.csv", |w| report.write_csv(w))?;
        write_csv_file(dir, "speed_snapshot.csv", |w| report.write_snapshot_csv(w))?;
        report.summary.write(dir)?;
    }
    Ok(report)
}
