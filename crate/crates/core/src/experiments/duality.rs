use std::io::Write;

use serde::Serialize;

use super::report::{write_csv_file, Summary};
use super::settings::ExperimentConfig;
use crate::error::{Error, Result};
use crate::mean_field::{duality_gap, DualityConfig, DualityResult};

/// Absolute allowance for discretisation, particle-count and cutoff bias.
pub const DUALITY_BIAS_BUDGET: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityRun {
    /// Which knob was coarsened relative to the base run.
    pub knob: String,
    pub result: DualityResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub base: DualityResult,
    pub tolerance: f64,
    pub passed: bool,
    pub refinements: Vec<DualityRun>,
    pub summary: Summary,
}

pub fn duality_tolerance(r: &DualityResult) -> f64 {
    DUALITY_BIAS_BUDGET + 3.0 * (r.se_lhs + r.se_rhs)
}

/// Both sides of the logistic duality at `t = horizon`, with optional
/// coarsened reruns that show how much each bias knob moves the gap.
pub fn run_duality(cfg: &ExperimentConfig) -> Result<DualityReport> {
    cfg.validate()?;
    let (gamma, k, beta) = cfg
        .spec
        .logistic_params()
        .ok_or_else(|| Error::Config("duality needs logistic drift with linear diffusion".into()))?;
    let d = &cfg.duality;
    let mc = DualityConfig {
        tree_replicates: cfg.replicates,
        mv_replicates: d.mv_replicates,
        npart: d.npart,
        dt: cfg.dt,
        delta: cfg.delta,
        seed: cfg.seed,
        ..Default::default()
    };
    let run = |mc: &DualityConfig| duality_gap(gamma, k, beta, d.x, d.y, cfg.horizon, mc);
    let base = run(&mc)?;
    let tolerance = duality_tolerance(&base);
    let passed = base.gap().abs() <= tolerance;

    let mut refinements = Vec::new();
    if d.refine {
        let variants = [
            ("dt x2", DualityConfig { dt: 2.0 * mc.dt, ..mc }),
            ("npart /2", DualityConfig { npart: (mc.npart / 2).max(2), ..mc }),
            ("delta x2", DualityConfig { delta: 2.0 * mc.delta, ..mc }),
        ];
        for (knob, v) in variants {
            refinements.push(DualityRun { knob: knob.to_string(), result: run(&v)? });
        }
    }

    let mut summary = Summary::new("duality", cfg);
    summary
        .metric("result", base)
        .metric("gap", base.gap())
        .metric("tolerance", tolerance)
        .metric("refinements", &refinements)
        .verdict("gap within bias budget plus 3 SE", passed);
    let report = DualityReport { base, tolerance, passed, refinements, summary };
    if let Some(dir) = &cfg.out_dir {
        write_csv_file(dir, "duality.csv", |w| report.write_csv(w))?;
        report.summary.write(dir)?;
    }
    Ok(report)
}

impl DualityReport {
    /// `DualityResult` rows, base first, then one row per refinement
    /// prefixed by its knob.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        DualityResult::write_csv(std::slice::from_ref(&self.base), out)?;
        if !self.refinements.is_empty() {
            writeln!(out, "knob,t,x,y,lhs,se_lhs,rhs,se_rhs,gap")?;
            for r in &self.refinements {
                let v = &r.result;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.knob,
                    v.t,
                    v.x,
                    v.y,
                    v.lhs,
                    v.se_lhs,
                    v.rhs,
                    v.se_rhs,
                    v.gap()
                )?;
            }
        }
        Ok(())
    }
}
