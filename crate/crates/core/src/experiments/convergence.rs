use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::report::{write_csv_file, Summary};
use super::settings::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sde_sim::{Simulator, TimeGrid};
use crate::stats::Estimate;
use crate::virgin_island::{TreeBuilder, TreeConfig};

const SYSTEM_STREAM: u64 = 20;
const TREE_STREAM: u64 = 21;

/// Tent of height 1 over `(lo, hi)`, peaking at the midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tent {
    pub lo: f64,
    pub hi: f64,
}

impl Tent {
    pub fn eval(&self, x: f64) -> f64 {
        let half = 0.5 * (self.hi - self.lo);
        let mid = self.lo + half;
        (1.0 - (x - mid).abs() / half).max(0.0)
    }

    /// `1 − exp(−Σ_i f(x_i))`.
    pub fn functional(&self, masses: impl IntoIterator<Item = f64>) -> f64 {
        let u: f64 = masses.into_iter().map(|x| self.eval(x)).sum();
        -(-u).exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub estimate: Estimate,
    /// `|E_N − E_virgin|`.
    pub gap: f64,
    pub gap_se: f64,
    /// `N = 1` has every emigrant return to its own island and is left out of the trend.
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub tent: Tent,
    pub virgin: Estimate,
    pub rows: Vec<ConvergenceRow>,
    /// Gap at the largest included `N` is below the gap at the smallest.
    pub gaps_shrink: bool,
    pub summary: Summary,
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "n,estimate,se,gap,gap_se,included")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{},{}", r.n, r.estimate.mean, r.estimate.se, r.gap, r.gap_se, r.included)?;
        }
        writeln!(out, "virgin,{},{},0,0,false", self.virgin.mean, self.virgin.se)?;
        Ok(())
    }
}

/// `E[F(Σ_i f(X_t^N(i)))]` along the island-count ladder against the
/// virgin island value `E[F(Σ f(η_{t−s}))]`, with immigration `θ/N` per island.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    if !cfg.spec.is_linear_diffusion() {
        return Err(Error::Regime("the convergence experiment needs a linear diffusion coefficient".into()));
    }
    let tent = Tent { lo: cfg.tent.0, hi: cfg.tent.1 };
    let grid = TimeGrid::new(0.0, cfg.horizon, cfg.dt)?;
    let sim = Simulator::new(&cfg.spec);
    let t = cfg.horizon;

    let builder = TreeBuilder::new(&cfg.spec, TreeConfig::new(cfg.theta, cfg.delta, t, cfg.dt))?;
    let virgin: Vec<f64> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let tree = builder.build(&cfg.x0, derive_seed(cfg.seed, &[TREE_STREAM, r]))?;
            Ok(tent.functional(tree.masses_at(t)?))
        })
        .collect::<Result<_>>()?;
    let virgin = Estimate::from_samples(&virgin);

    let mut rows = Vec::with_capacity(cfg.ladder.len());
    for &n in &cfg.ladder {
        let x0 = cfg.initial_state(n)?;
        let values: Vec<f64> = (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let mut x = x0.clone();
                sim.drive_uniform(
                    cfg.theta,
                    &mut x,
                    &grid,
                    derive_seed(cfg.seed, &[SYSTEM_STREAM, n as u64, r]),
                    |_, _| {},
                );
                tent.functional(x.iter().copied())
            })
            .collect();
        let estimate = Estimate::from_samples(&values);
        rows.push(ConvergenceRow {
            n,
            estimate,
            gap: (estimate.mean - virgin.mean).abs(),
            gap_se: estimate.combined_se(&virgin),
            included: n >= 2,
        });
    }
    let included: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.included).collect();
    let gaps_shrink = match (included.iter().min_by_key(|r| r.n), included.iter().max_by_key(|r| r.n)) {
        (Some(a), Some(b)) if a.n < b.n => b.gap < a.gap,
        _ => false,
    };

    let mut summary = Summary::new("converge", cfg);
    summary
        .metric("tent", tent)
        .metric("virgin", virgin)
        .metric("rows", &rows)
        .verdict("gap shrinks along the ladder", gaps_shrink);
    let report = ConvergenceReport { tent, virgin, rows, gaps_shrink, summary };
    if let Some(dir) = &cfg.out_dir {
        write_csv_file(dir, "convergence.csv", |w| report.write_csv(w))?;
        report.summary.write(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientSpec;

    #[test]
    fn tent_shape() {
        let f = Tent { lo: 0.5, hi: 1.5 };
        assert_eq!(f.eval(1.0), 1.0);
        assert_eq!(f.eval(0.5), 0.0);
        assert_eq!(f.eval(2.0), 0.0);
        assert!((f.eval(1.25) - 0.5).abs() < 1e-15);
        assert_eq!(f.functional([]), 0.0);
    }

    #[test]
    fn immigration_fills_an_empty_start() {
        let mut c = ExperimentConfig::for_spec(CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap());
        c.replicates = 200;
        c.x0 = vec![];
        c.theta = 2.0;
        c.dt = 0.01;
        c.ladder = vec![1, 10];
        let rep = run_convergence(&c).unwrap();
        assert!(rep.virgin.mean > 0.05, "{:?}", rep.virgin);
        assert!(rep.rows.iter().all(|r| r.estimate.mean > 0.05));
        assert!(!rep.rows[0].included && rep.rows[1].included);
    }

    #[test]
    fn nonlinear_diffusion_is_out_of_scope() {
        let mut c = ExperimentConfig::for_spec(CoefficientSpec::selection_mutation(1.0, 1.0).unwrap());
        c.x0 = vec![0.5];
        c.replicates = 100;
        assert!(matches!(run_convergence(&c), Err(Error::Regime(_))));
    }
}
