use std::io::Write;

use serde::Serialize;

use super::report::{write_csv_file, Summary};
use super::settings::ExperimentConfig;
use crate::analytics::{extinction_criterion, solve_rho};
use crate::coefficients::ValidationReport;
use crate::error::Result;
use crate::quad::QuadratureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// `Θ ≤ 1`: the virgin island model dies out almost surely.
    Extinction,
    SurvivalPossible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub criterion: f64,
    pub verdict: Verdict,
    /// Logistic supercritical case only.
    pub rho: Option<f64>,
    /// `(y, P^y(V_∞ = 0))`; empty unless the spec is logistic.
    pub survival: Vec<(f64, f64)>,
    pub validation: ValidationReport,
    pub summary: Summary,
}

pub const SURVIVAL_GRID: [f64; 9] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 8.0];

/// Extinction criterion, verdict, `ρ` and the extinction probability curve.
pub fn run_analysis(cfg: &ExperimentConfig) -> Result<AnalysisReport> {
    let q = QuadratureConfig::default();
    let validation = cfg.spec.validate_assumptions(200);
    let criterion = extinction_criterion(&cfg.spec, &q)?;
    let verdict = if criterion <= 1.0 { Verdict::Extinction } else { Verdict::SurvivalPossible };
    let mut rho = None;
    let mut survival = Vec::new();
    if let Some((gamma, k, beta)) = cfg.spec.logistic_params() {
        match verdict {
            Verdict::Extinction => survival = SURVIVAL_GRID.iter().map(|&y| (y, 1.0)).collect(),
            Verdict::SurvivalPossible => {
                let sol = solve_rho(gamma, k, beta, 1e-10)?;
                rho = Some(sol.rho);
                survival = SURVIVAL_GRID
                    .iter()
                    .map(|&y| Ok((y, sol.extinction_probability(y, &q)?)))
                    .collect::<Result<_>>()?;
            }
        }
    }
    let mut summary = Summary::new("analyze", cfg);
    summary
        .metric("criterion", criterion)
        .metric("verdict", verdict)
        .metric("rho", rho)
        .metric("validation", &validation)
        .verdict("assumptions validated", validation.all_passed());
    let report = AnalysisReport { criterion, verdict, rho, survival, validation, summary };
    if let Some(dir) = &cfg.out_dir {
        write_csv_file(dir, "analysis.csv", |w| report.write_csv(w))?;
        write_csv_file(dir, "survival.csv", |w| report.write_survival_csv(w))?;
        report.summary.write(dir)?;
    }
    Ok(report)
}

impl AnalysisReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "quantity,value")?;
        writeln!(out, "criterion,{}", self.criterion)?;
        let verdict = match self.verdict {
            Verdict::Extinction => "extinction",
            Verdict::SurvivalPossible => "survival_possible",
        };
        writeln!(out, "verdict,{verdict}")?;
        if let Some(rho) = self.rho {
            writeln!(out, "rho,{rho}")?;
        }
        Ok(())
    }

    pub fn write_survival_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "y,extinction_prob")?;
        for (y, p) in &self.survival {
            writeln!(out, "{y},{p}")?;
        }
        Ok(())
    }
}
