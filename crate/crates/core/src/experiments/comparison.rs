use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::functional::{FunctionClass, TestFunctional};
use super::report::{write_csv_file, Summary};
use super::settings::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sde_sim::{Simulator, TimeGrid, Topology};
use crate::stats::{Accumulator, Estimate};
use crate::virgin_island::{TreeBuilder, TreeConfig};

const SYSTEM_STREAM: u64 = 10;
const TREE_STREAM: u64 = 11;
const LOOP_FREE_STREAM: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub functional: TestFunctional,
    pub class: FunctionClass,
    pub system: Estimate,
    pub virgin: Estimate,
    pub loop_free: Option<Estimate>,
    /// `E F(system) − E F(virgin)`; the order predicts a nonpositive value.
    pub gap: f64,
    pub combined_se: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub classes: Vec<FunctionClass>,
    pub rows: Vec<ComparisonRow>,
    pub dropped_births: u64,
    pub summary: Summary,
}

impl ComparisonReport {
    pub fn all_satisfied(&self) -> bool {
        self.rows.iter().all(|r| r.satisfied)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "functional,class,system,se_system,virgin,se_virgin,loop_free,se_loop_free,gap,combined_se,satisfied"
        )?;
        for r in &self.rows {
            let (lf, lf_se) =
                r.loop_free.map_or((String::new(), String::new()), |e| (e.mean.to_string(), e.se.to_string()));
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.functional,
                r.class,
                r.system.mean,
                r.system.se,
                r.virgin.mean,
                r.virgin.se,
                lf,
                lf_se,
                r.gap,
                r.combined_se,
                r.satisfied
            )?;
        }
        Ok(())
    }
}

/// Pairs every functional with the first applicable order it belongs to.
fn assign_classes(cfg: &ExperimentConfig) -> Result<(Vec<FunctionClass>, Vec<FunctionClass>)> {
    let classes = FunctionClass::applicable(&cfg.spec.structure);
    if classes.is_empty() {
        return Err(Error::Config("the declared structure of μ and σ² admits no comparison order".into()));
    }
    let assigned = cfg
        .functionals
        .iter()
        .map(|f| {
            classes.iter().copied().find(|&c| f.belongs_to(c)).ok_or_else(|| {
                let names: Vec<_> = classes.iter().map(|c| c.label()).collect();
                Error::Config(format!("{f} is not in the applicable class(es) {}", names.join(", ")))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((classes, assigned))
}

/// Sorted distinct evaluation times and their grid nodes.
fn observation_nodes(functionals: &[TestFunctional], grid: &TimeGrid) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut times: Vec<f64> = functionals.iter().flat_map(|f| f.times().iter().copied()).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let nodes = times.iter().map(|&t| grid.index_of(t)).collect::<Result<Vec<_>>>()?;
    Ok((times, nodes))
}

fn accumulate(functionals: &[TestFunctional], times: &[f64], totals: &[Vec<f64>]) -> Vec<Estimate> {
    functionals
        .iter()
        .map(|f| {
            let idx: Vec<usize> = f.times().iter().map(|t| times.iter().position(|s| s == t).unwrap()).collect();
            let mut acc = Accumulator::default();
            let mut args = vec![0.0; idx.len()];
            for row in totals {
                for (a, &i) in args.iter_mut().zip(&idx) {
                    *a = row[i];
                }
                acc.push(f.eval(&args));
            }
            acc.estimate()
        })
        .collect()
}

/// Total system mass at `nodes` for one replicate.
fn system_totals(
    sim: &Simulator,
    topology: &Topology,
    x0: &[f64],
    grid: &TimeGrid,
    nodes: &[usize],
    seed: u64,
) -> Vec<f64> {
    let mut out = vec![0.0; nodes.len()];
    let mut x = x0.to_vec();
    let observe = |node: usize, s: &[f64]| {
        if let Some(j) = nodes.iter().position(|&n| n == node) {
            out[j] = s.iter().sum();
        }
    };
    match topology {
        Topology::Uniform(_) => sim.drive_uniform(0.0, &mut x, grid, seed, observe),
        Topology::Matrix(m) => sim.drive_matrix(m, 0.0, &mut x, grid, seed, observe),
    }
    out
}

/// `E F(Σ_i X_t(i))` against `E F(V_t)` for every configured functional, with
/// the loop-free system as a diagnostic middle column.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let (classes, assigned) = assign_classes(cfg)?;
    let topology = cfg.topology()?;
    let n = topology.size();
    let x0 = cfg.initial_state(n)?;
    let grid = TimeGrid::new(0.0, cfg.horizon, cfg.dt)?;
    let (times, nodes) = observation_nodes(&cfg.functionals, &grid)?;
    let sim = Simulator::new(&cfg.spec);

    let system: Vec<Vec<f64>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| system_totals(&sim, &topology, &x0, &grid, &nodes, derive_seed(cfg.seed, &[SYSTEM_STREAM, r])))
        .collect();

    let builder = TreeBuilder::new(&cfg.spec, TreeConfig::new(0.0, cfg.delta, cfg.horizon, cfg.dt))?;
    let trees: Vec<(Vec<f64>, u64)> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let tree = builder.build(&cfg.x0, derive_seed(cfg.seed, &[TREE_STREAM, r]))?;
            let v = times.iter().map(|&t| tree.total_mass(t)).collect::<Result<Vec<_>>>()?;
            Ok((v, tree.dropped_births))
        })
        .collect::<Result<_>>()?;
    let dropped_births = trees.iter().map(|t| t.1).sum();
    let virgin: Vec<Vec<f64>> = trees.into_iter().map(|t| t.0).collect();

    let lf_reps = cfg.loop_free_replicates.min(cfg.replicates) as u64;
    let loop_free: Vec<Vec<f64>> = (0..lf_reps)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, &[LOOP_FREE_STREAM, r]);
            let path = sim.loop_free(&topology, 0.0, &x0, cfg.loop_free_levels, &grid, seed)?;
            Ok(nodes.iter().map(|&k| path.total_mass(k)).collect())
        })
        .collect::<Result<_>>()?;

    let sys_est = accumulate(&cfg.functionals, &times, &system);
    let vir_est = accumulate(&cfg.functionals, &times, &virgin);
    let lf_est = (lf_reps >= 2).then(|| accumulate(&cfg.functionals, &times, &loop_free));
    let rows: Vec<ComparisonRow> = cfg
        .functionals
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (s, v) = (sys_est[i], vir_est[i]);
            let gap = s.mean - v.mean;
            let combined_se = s.combined_se(&v);
            ComparisonRow {
                functional: f.clone(),
                class: assigned[i],
                system: s,
                virgin: v,
                loop_free: lf_est.as_ref().map(|e| e[i]),
                gap,
                combined_se,
                satisfied: gap <= 3.0 * combined_se,
            }
        })
        .collect();

    let mut summary = Summary::new("compare", cfg);
    summary
        .metric("classes", &classes)
        .metric("rows", &rows)
        .metric("dropped_births", dropped_births)
        .metric("loop_free_replicates", lf_reps);
    for r in &rows {
        summary.verdict(format!("{} within 3 SE", r.functional), r.satisfied);
    }
    let report = ComparisonReport { classes, rows, dropped_births, summary };
    if let Some(dir) = &cfg.out_dir {
        write_csv_file(dir, "comparison.csv", |w| report.write_csv(w))?;
        report.summary.write(dir)?;
    }
    Ok(report)
}
