//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and exits
//! nonzero if any fails. Positional integer arguments select criteria.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use island_diffusions::analytics::{extinction_criterion, logistic_criterion, scale_function, solve_rho};
use island_diffusions::coefficients::CoefficientSpec;
use island_diffusions::experiments::{
    run_analysis, run_comparison, run_convergence, run_duality, write_csv_file, ExperimentConfig, Verdict,
};
use island_diffusions::mean_field::{InitialLaw, MeanFieldSolver};
use island_diffusions::quad::{integrate_from_zero, integrate_to_infinity, QuadratureConfig};
use island_diffusions::rng::derive_seed;
use island_diffusions::sde_sim::{write_system_csv, Simulator, TimeGrid};
use island_diffusions::stats::ks_two_sample;
use island_diffusions::virgin_island::{
    build_tree, excursion_area_estimate, q_mass_estimate, SplittingConfig, TreeConfig,
};
use rayon::prelude::*;

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn logistic() -> CoefficientSpec {
    CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap()
}

fn feller() -> CoefficientSpec {
    CoefficientSpec::feller(0.0, 1.0).unwrap()
}

fn critical_feller() -> Check {
    let theta = extinction_criterion(&feller(), &QuadratureConfig::default())?;
    Ok(((theta - 1.0).abs() <= 1e-6, format!("Θ = {theta:.9}")))
}

fn logistic_anchor() -> Check {
    let q = QuadratureConfig::default();
    let closed = logistic_criterion(1.0, 1.0, 1.0, &q)?;
    let general = extinction_criterion(&logistic(), &q)?;
    let target = (std::f64::consts::PI / 2.0).sqrt();
    let verdict = run_analysis(&ExperimentConfig::for_spec(logistic()))?.verdict;
    let ok =
        (closed - target).abs() <= 1e-6 && (closed - general).abs() <= 1e-6 && verdict == Verdict::SurvivalPossible;
    Ok((ok, format!("logistic {closed:.9}, general {general:.9}, target {target:.9}, {verdict:?}")))
}

fn stepping_stone() -> Check {
    let spec = CoefficientSpec::selection_mutation(1.0, 1.0)?;
    let theta = extinction_criterion(&spec, &QuadratureConfig::default())?;
    let verdict = run_analysis(&ExperimentConfig::for_spec(spec))?.verdict;
    let target = std::f64::consts::E - 2.0;
    let ok = (theta - target).abs() <= 1e-6 && verdict == Verdict::Extinction;
    Ok((ok, format!("Θ = {theta:.9}, target {target:.9}, {verdict:?}")))
}

fn rho_and_gamma() -> Check {
    let sol = solve_rho(1.0, 1.0, 1.0, 1e-10)?;
    let q = QuadratureConfig { abs_tol: 1e-12, rel_tol: 1e-10, ..Default::default() };
    let pdf = |x: f64| sol.pdf(x).unwrap_or(f64::NAN);
    let mass = integrate_from_zero(pdf, 1.0, &q)?.value + integrate_to_infinity(pdf, 1.0, 1.0, &q)?.value;
    let mut probs = vec![sol.extinction_probability(0.0, &q)?];
    for y in [0.5, 1.0, 2.0, 4.0] {
        probs.push(sol.extinction_probability(y, &q)?);
    }
    let decreasing = probs[1..].windows(2).all(|w| w[1] < w[0]) && probs[1] < 1.0;
    let ok = sol.residual.abs() < 1e-8 && (mass - 1.0).abs() <= 1e-6 && probs[0] == 1.0 && decreasing;
    Ok((
        ok,
        format!("ρ = {:.9}, residual {:.1e}, mass {mass:.9}, P(0, .5, 1, 2, 4) = {probs:.4?}", sol.rho, sol.residual),
    ))
}

fn excursion_area() -> Check {
    let cfg = SplittingConfig { dt: 1e-3, ..Default::default() };
    let q = QuadratureConfig::default();
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, spec, seed) in [("feller", feller(), 51), ("logistic", logistic(), 52)] {
        let theta = extinction_criterion(&spec, &q)?;
        let est = excursion_area_estimate(&spec, 1e-3, &cfg, 1_000_000, seed)?;
        let rel = (est.estimate.mean - theta) / theta;
        ok &= rel.abs() <= 0.05;
        detail.push(format!(
            "{name} {:.4} ± {:.4} vs {theta:.4} ({:+.2}%)",
            est.estimate.mean,
            est.estimate.se,
            100.0 * rel
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn q_mass() -> Check {
    let cfg = SplittingConfig { dt: 1e-4, ..Default::default() };
    let q = QuadratureConfig::default();
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, spec, seed) in [("feller", feller(), 61), ("logistic", logistic(), 62)] {
        let target = 1.0 / scale_function(&spec, 0.1, &q)?;
        let est = q_mass_estimate(&spec, 1e4, 0.1, &cfg, 1_000_000, seed)?;
        let rel = (est.estimate.mean - target) / target;
        ok &= rel.abs() <= 0.05;
        detail.push(format!(
            "{name} {:.4} ± {:.4} vs {target:.4} ({:+.2}%)",
            est.estimate.mean,
            est.estimate.se,
            100.0 * rel
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn duality() -> Check {
    let mut cfg = ExperimentConfig::for_spec(logistic());
    cfg.seed = 7;
    cfg.horizon = 0.5;
    cfg.dt = 1e-3;
    cfg.delta = 0.02;
    cfg.replicates = 100_000;
    cfg.functionals.retain(|f| f.times().iter().all(|&t| t <= 0.5));
    cfg.duality.x = 1.0;
    cfg.duality.y = 1.0;
    cfg.duality.npart = 2000;
    cfg.duality.mv_replicates = 10_000;
    let rep = run_duality(&cfg)?;
    let b = rep.base;
    Ok((
        rep.passed,
        format!(
            "lhs {:.5} ± {:.5}, rhs {:.5} ± {:.5}, |gap| {:.5} ≤ {:.5}",
            b.lhs,
            b.se_lhs,
            b.rhs,
            b.se_rhs,
            b.gap().abs(),
            rep.tolerance
        ),
    ))
}

fn comparison() -> Check {
    let mut cfg = ExperimentConfig::for_spec(logistic());
    cfg.seed = 8;
    cfg.islands = 20;
    cfg.delta = 0.002;
    cfg.replicates = 100_000;
    let rep = run_comparison(&cfg)?;
    let worst = rep.rows.iter().map(|r| r.gap / r.combined_se).fold(f64::NEG_INFINITY, f64::max);
    let ok = rep.all_satisfied() && rep.rows.len() == 6 && rep.dropped_births == 0;
    Ok((ok, format!("{} cells, worst gap/SE {worst:+.2}, dropped births {}", rep.rows.len(), rep.dropped_births)))
}

fn convergence() -> Check {
    let mut cfg = ExperimentConfig::for_spec(logistic());
    cfg.seed = 9;
    cfg.horizon = 1.0;
    cfg.delta = 0.01;
    cfg.replicates = 100_000;
    cfg.ladder = vec![10, 50, 200];
    let rep = run_convergence(&cfg)?;
    let gap = |n: usize| rep.rows.iter().find(|r| r.n == n).map(|r| r.gap).unwrap();
    let (g10, g200) = (gap(10), gap(200));
    let trail: Vec<String> = rep.rows.iter().map(|r| format!("N={} {:.4}±{:.4}", r.n, r.gap, r.gap_se)).collect();
    Ok((g200 < g10, format!("virgin {:.4}; gaps {}", rep.virgin.mean, trail.join(", "))))
}

/// Every output of a small seeded run of each experiment.
fn seeded_outputs(dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::for_spec(logistic());
    cfg.seed = 1234;
    cfg.replicates = 200;
    cfg.loop_free_replicates = 200;
    cfg.dt = 1e-2;
    cfg.ladder = vec![10, 20];
    cfg.duality.npart = 50;
    cfg.duality.mv_replicates = 20;
    cfg.out_dir = Some(dir.to_path_buf());
    run_comparison(&cfg)?;
    run_convergence(&cfg)?;
    run_duality(&cfg)?;
    let grid = TimeGrid::new(0.0, 1.0, 1e-2)?;
    let sys = Simulator::new(&cfg.spec).uniform_system(20, 1.0, &[1.0; 20], &grid, cfg.seed)?;
    write_csv_file(dir, "system.csv", |w| write_system_csv(&sys, w))?;
    let tree = build_tree(&cfg.spec, &[1.0], TreeConfig::new(1.0, 0.05, 1.0, 1e-2), cfg.seed)?;
    write_csv_file(dir, "tree.csv", |w| tree.write_csv(w))?;
    let ens = MeanFieldSolver::new(&cfg.spec).run(&InitialLaw::Point(1.0), 100, &grid, cfg.seed)?;
    write_csv_file(dir, "mean_field.csv", |w| ens.write_csv(w))?;
    Ok(())
}

fn identical_dirs(a: &Path, b: &Path) -> Result<(bool, usize), Box<dyn std::error::Error>> {
    let mut names: Vec<_> = std::fs::read_dir(a)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
    names.sort();
    let mut same = std::fs::read_dir(b)?.count() == names.len();
    for name in &names {
        same &= std::fs::read(a.join(name))? == std::fs::read(b.join(name))?;
    }
    Ok((same, names.len()))
}

/// Largest violation of `0 ≤ value ≤ upper` over systems, trees and particle
/// paths of every coefficient family; 0 when all values are in range.
fn range_violation() -> Result<f64, Box<dyn std::error::Error>> {
    let specs =
        [logistic(), feller(), CoefficientSpec::feller(0.5, 1.0)?, CoefficientSpec::selection_mutation(1.0, 1.0)?];
    let grid = TimeGrid::new(0.0, 2.0, 1e-3)?;
    let mut worst = 0.0f64;
    let mut note = |v: f64, upper: f64| {
        let excess = if v.is_finite() { (-v).max(v - upper).max(0.0) } else { f64::INFINITY };
        worst = worst.max(excess);
    };
    for spec in &specs {
        let upper = spec.upper();
        let start = if spec.domain.is_bounded() { 0.5 } else { 1.0 };
        let sim = Simulator::new(spec);
        for seed in 0..20 {
            let sys = sim.uniform_system(20, 1.0, &[start; 20], &grid, seed)?;
            sys.islands.iter().flat_map(|p| &p.values).for_each(|&v| note(v, upper));
            let lf = sim.level_system(5, 1.0, &[start; 5], 5, &grid, seed)?;
            lf.islands.iter().flat_map(|p| &p.values).for_each(|&v| note(v, upper));
            let tree = build_tree(spec, &[start], TreeConfig::new(1.0, 0.05, 2.0, 1e-3), seed)?;
            tree.islands.iter().flat_map(|i| &i.values).for_each(|&v| note(v, upper));
            let ens = MeanFieldSolver::new(spec).run(&InitialLaw::Point(start), 200, &grid, seed)?;
            ens.paths.iter().flatten().flat_map(|p| &p.values).for_each(|&v| note(v, upper));
        }
    }
    Ok(worst)
}

fn level_sum_ks() -> Result<f64, Box<dyn std::error::Error>> {
    let spec = logistic();
    let sim = Simulator::new(&spec);
    let grid = TimeGrid::new(0.0, 1.0, 1e-3)?;
    let x0 = [1.0, 0.5, 0.0, 0.0, 0.0];
    let end = grid.steps();
    let plain: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|r| sim.uniform_system(5, 0.5, &x0, &grid, derive_seed(101, &[r])).map(|p| p.total_mass(end)))
        .collect::<Result<_, _>>()?;
    let levels: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|r| sim.level_system(5, 0.5, &x0, 10, &grid, derive_seed(102, &[r])).map(|p| p.total_mass(end)))
        .collect::<Result<_, _>>()?;
    Ok(ks_two_sample(&plain, &levels).p_value)
}

fn determinism_and_range() -> Check {
    let tmp = tempfile::tempdir()?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        std::fs::create_dir_all(d)?;
        seeded_outputs(d)?;
    }
    let (same, files) = identical_dirs(&a, &b)?;
    let worst = range_violation()?;
    let p = level_sum_ks()?;
    let ok = same && files > 0 && worst == 0.0 && p > 0.01;
    Ok((ok, format!("{files} files identical: {same}; worst range excess {worst:e}; level-sum KS p = {p:.3}")))
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "critical Feller criterion", budget: Some(Duration::from_secs(1)), run: critical_feller },
    Criterion { id: 2, name: "logistic criterion anchor", budget: None, run: logistic_anchor },
    Criterion { id: 3, name: "stepping-stone anchor", budget: None, run: stepping_stone },
    Criterion { id: 4, name: "ρ and Γ_ρ", budget: Some(Duration::from_secs(5)), run: rho_and_gamma },
    Criterion { id: 5, name: "excursion-area identity", budget: Some(Duration::from_secs(300)), run: excursion_area },
    Criterion { id: 6, name: "Q-mass identity", budget: Some(Duration::from_secs(300)), run: q_mass },
    Criterion { id: 7, name: "duality", budget: Some(Duration::from_secs(600)), run: duality },
    Criterion { id: 8, name: "comparison", budget: Some(Duration::from_secs(900)), run: comparison },
    Criterion { id: 9, name: "convergence trend", budget: None, run: convergence },
    Criterion { id: 10, name: "determinism and range", budget: None, run: determinism_and_range },
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let (passed, detail) = match (c.run)() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let elapsed = start.elapsed();
        let in_time = c.budget.is_none_or(|b| elapsed <= b);
        let passed = passed && in_time;
        if !passed {
            failures += 1;
        }
        let budget = c.budget.map(|b| format!(" / {:.0?}", b)).unwrap_or_default();
        println!(
            "[{}] {:>2}. {}: {detail} ({:.2?}{budget})",
            if passed { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
