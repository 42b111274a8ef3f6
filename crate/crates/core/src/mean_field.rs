//! McKean–Vlasov particle approximation and the duality between the mean
//! field model and the total mass of the virgin island tree (logistic case).
//!
//! With `Npart` particles each following
//! `dM = (M̄ − M + μ(M))dt + √σ²(M) dB`, where `M̄` is the current empirical
//! average, the ensemble is exactly the uniform `Npart`-island system without
//! immigration, so it is driven by the same stepper and streams.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::RhoSolution;
use crate::coefficients::CoefficientSpec;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::sde_sim::{Path, Scheme, Simulator, TimeGrid};
use crate::stats::Estimate;
use crate::virgin_island::{ExcursionMode, TreeBuilder, TreeConfig};

const INIT_STREAM: u64 = 0x1417;
const TREE_STREAM: u64 = 1;
const PARTICLE_STREAM: u64 = 2;

/// Law of `M_0`.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    Point(f64),
    GammaRho(RhoSolution),
    /// Particle `i` starts at `samples[i % len]`.
    Samples(Vec<f64>),
}

impl InitialLaw {
    fn draw(&self, npart: usize, seed: u64) -> Vec<f64> {
        match self {
            InitialLaw::Point(x) => vec![*x; npart],
            InitialLaw::GammaRho(sol) => gamma_rho_samples(sol, npart, seed),
            InitialLaw::Samples(s) => (0..npart).map(|i| s[i % s.len()]).collect(),
        }
    }

    fn validate(&self, spec: &CoefficientSpec) -> Result<()> {
        let bad = match self {
            InitialLaw::Point(x) => (!spec.domain.contains(*x)).then_some(*x),
            InitialLaw::GammaRho(_) => None,
            InitialLaw::Samples(s) if s.is_empty() => {
                return Err(Error::Config("empty initial sample".into()));
            }
            InitialLaw::Samples(s) => s.iter().copied().find(|&x| !spec.domain.contains(x)),
        };
        match bad {
            Some(x) => Err(Error::Domain(format!("initial value {x} outside [0, {}]", spec.upper()))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleEnsemble {
    pub grid: TimeGrid,
    pub count: usize,
    /// Per-particle paths, kept only on request.
    pub paths: Option<Vec<Path>>,
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Particle values at the horizon.
    pub terminal: Vec<f64>,
}

impl ParticleEnsemble {
    /// CSV rows `t,empirical_mean,empirical_second_moment`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,empirical_mean,empirical_second_moment")?;
        for (i, (m, s)) in self.mean.iter().zip(&self.second_moment).enumerate() {
            writeln!(out, "{},{},{}", self.grid.time(i), m, s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeanFieldSolver<'a> {
    pub spec: &'a CoefficientSpec,
    pub scheme: Scheme,
    pub keep_paths: bool,
}

impl<'a> MeanFieldSolver<'a> {
    pub fn new(spec: &'a CoefficientSpec) -> Self {
        Self { spec, scheme: Scheme::default(), keep_paths: true }
    }

    pub fn run(&self, init: &InitialLaw, npart: usize, grid: &TimeGrid, seed: u64) -> Result<ParticleEnsemble> {
        self.drive(init, npart, grid, seed, |_, _| {})
    }

    /// Like [`run`](Self::run), also handing every node's particle values to `observe`.
    pub fn drive<F: FnMut(usize, &[f64])>(
        &self,
        init: &InitialLaw,
        npart: usize,
        grid: &TimeGrid,
        seed: u64,
        mut observe: F,
    ) -> Result<ParticleEnsemble> {
        if npart < 2 {
            return Err(Error::Config(format!("{npart} particles; at least 2 are required")));
        }
        init.validate(self.spec)?;
        let mut x = init.draw(npart, seed);
        let nodes = grid.nodes();
        let mut mean = vec![0.0; nodes];
        let mut second = vec![0.0; nodes];
        let mut paths = self.keep_paths.then(|| vec![Path::zeros(*grid); npart]);
        let inv = 1.0 / npart as f64;
        Simulator::with_scheme(self.spec, self.scheme).drive_uniform(0.0, &mut x, grid, seed, |node, s| {
            let (m, q) = s.iter().fold((0.0, 0.0), |(m, q), &v| (m + v, q + v * v));
            mean[node] = m * inv;
            second[node] = q * inv;
            if let Some(p) = paths.as_mut() {
                for (path, &v) in p.iter_mut().zip(s) {
                    path.values[node] = v;
                }
            }
            observe(node, s);
        });
        Ok(ParticleEnsemble { grid: *grid, count: npart, paths, mean, second_moment: second, terminal: x })
    }
}

pub fn simulate_mckean_vlasov(
    spec: &CoefficientSpec,
    init: &InitialLaw,
    npart: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<ParticleEnsemble> {
    MeanFieldSolver::new(spec).run(init, npart, grid, seed)
}

/// Monte Carlo budget for [`duality_gap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityConfig {
    pub tree_replicates: usize,
    pub mv_replicates: usize,
    pub npart: usize,
    pub dt: f64,
    pub delta: f64,
    pub mode: ExcursionMode,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            tree_replicates: 100_000,
            mv_replicates: 10_000,
            npart: 2000,
            dt: 1e-3,
            delta: 0.02,
            mode: ExcursionMode::default(),
            scheme: Scheme::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityResult {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// `E^y exp(−(γ/β) x V_t)` from virgin island trees.
    pub lhs: f64,
    pub se_lhs: f64,
    /// `E^x exp(−(γ/β) M_t y)` from the particle system.
    pub rhs: f64,
    pub se_rhs: f64,
}

impl DualityResult {
    pub fn gap(&self) -> f64 {
        self.lhs - self.rhs
    }

    pub fn write_csv<W: Write>(rows: &[DualityResult], out: &mut W) -> Result<()> {
        writeln!(out, "t,x,y,lhs,se_lhs,rhs,se_rhs,gap")?;
        for r in rows {
            writeln!(out, "{},{},{},{},{},{},{},{}", r.t, r.x, r.y, r.lhs, r.se_lhs, r.rhs, r.se_rhs, r.gap())?;
        }
        Ok(())
    }
}

/// Both sides of `E^y e^{−(γ/β)xV_t} = E^x e^{−(γ/β)M_t y}` for logistic
/// branching with `σ² = 2βy`.
pub fn duality_gap(gamma: f64, k: f64, beta: f64, x: f64, y: f64, t: f64, mc: &DualityConfig) -> Result<DualityResult> {
    for (name, v) in [("x", x), ("y", y), ("t", t)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} = {v} must be finite and nonnegative")));
        }
    }
    let spec = CoefficientSpec::logistic(gamma, k, beta)?;
    let c = gamma / beta;
    let exact = |v: f64| Ok(DualityResult { t, x, y, lhs: v, se_lhs: 0.0, rhs: v, se_rhs: 0.0 });
    if t == 0.0 {
        return exact((-c * x * y).exp());
    }
    if x == 0.0 || y == 0.0 {
        return exact(1.0);
    }
    if mc.tree_replicates < 2 || mc.mv_replicates < 2 {
        return Err(Error::Config("duality needs at least two replicates per side".into()));
    }
    let grid = TimeGrid::new(0.0, t, mc.dt)?;

    let mut tcfg = TreeConfig::new(0.0, mc.delta, t, mc.dt);
    tcfg.mode = mc.mode;
    tcfg.scheme = mc.scheme;
    let builder = TreeBuilder::new(&spec, tcfg)?;
    let tree_seed = derive_seed(mc.seed, &[TREE_STREAM]);
    let lhs: Vec<f64> = (0..mc.tree_replicates as u64)
        .into_par_iter()
        .map(|r| {
            let tree = builder.build(&[y], derive_seed(tree_seed, &[r]))?;
            Ok((-c * x * tree.total_mass(t)?).exp())
        })
        .collect::<Result<_>>()?;

    let solver = MeanFieldSolver { spec: &spec, scheme: mc.scheme, keep_paths: false };
    let mv_seed = derive_seed(mc.seed, &[PARTICLE_STREAM]);
    let rhs: Vec<f64> = (0..mc.mv_replicates as u64)
        .into_par_iter()
        .map(|r| {
            let ens = solver.run(&InitialLaw::Point(x), mc.npart, &grid, derive_seed(mv_seed, &[r]))?;
            Ok(ens.terminal.iter().map(|&m| (-c * m * y).exp()).sum::<f64>() / ens.count as f64)
        })
        .collect::<Result<_>>()?;

    let l = Estimate::from_samples(&lhs);
    let r = Estimate::from_samples(&rhs);
    Ok(DualityResult { t, x, y, lhs: l.mean, se_lhs: l.se, rhs: r.mean, se_rhs: r.se })
}

/// Sup distance between the empirical CDF of `sample` and `cdf`.
pub fn sup_cdf_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Draws `n` values of `Γ_ρ` from the stream `seed`.
pub fn gamma_rho_samples(sol: &RhoSolution, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[INIT_STREAM]);
    (0..n).map(|_| sol.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::solve_rho;

    #[test]
    fn zero_start_stays_zero() {
        let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let e = simulate_mckean_vlasov(&spec, &InitialLaw::Point(0.0), 10, &grid, 3).unwrap();
        assert!(e.mean.iter().chain(&e.second_moment).all(|&v| v == 0.0));
    }

    #[test]
    fn mean_curve_is_the_particle_average() {
        let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.5, 0.01).unwrap();
        let e = simulate_mckean_vlasov(&spec, &InitialLaw::Point(1.0), 50, &grid, 3).unwrap();
        let paths = e.paths.as_ref().unwrap();
        for node in [0, 10, 50] {
            let avg = paths.iter().map(|p| p.values[node]).sum::<f64>() / 50.0;
            assert!((avg - e.mean[node]).abs() < 1e-12);
        }
        assert_eq!(e.terminal, paths.iter().map(|p| p.last()).collect::<Vec<_>>());
    }

    #[test]
    fn critical_feller_mean_is_conserved() {
        let spec = CoefficientSpec::feller(0.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 2.0, 0.01).unwrap();
        let e = simulate_mckean_vlasov(&spec, &InitialLaw::Point(1.0), 20_000, &grid, 8).unwrap();
        // sd of the empirical mean at t=2 is about √(2·2/20000) ≈ 0.014
        assert!((e.mean.last().unwrap() - 1.0).abs() < 0.06, "{}", e.mean.last().unwrap());
    }

    #[test]
    fn rejects_too_few_particles() {
        let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.5, 0.01).unwrap();
        let err = simulate_mckean_vlasov(&spec, &InitialLaw::Point(1.0), 1, &grid, 3).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn trivial_duality_cases_are_exact() {
        let mc = DualityConfig::default();
        let r = duality_gap(1.0, 1.0, 1.0, 1.0, 2.0, 0.0, &mc).unwrap();
        assert_eq!(r.lhs, (-2.0f64).exp());
        assert_eq!(r.lhs, r.rhs);
        let r = duality_gap(1.0, 1.0, 1.0, 0.0, 2.0, 1.0, &mc).unwrap();
        assert_eq!((r.lhs, r.rhs, r.se_lhs, r.se_rhs), (1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn gamma_rho_start_is_nearly_invariant() {
        let sol = solve_rho(1.0, 1.0, 1.0, 1e-10).unwrap();
        let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
        // Γ_ρ puts mass ~x^{ρ/β} near 0, where a step of size dt leaves an
        // atom at 0 of roughly that order; dt = 1e-3 gives a 0.05 distance.
        let grid = TimeGrid::new(0.0, 2.0, 1e-4).unwrap();
        let mut solver = MeanFieldSolver::new(&spec);
        solver.keep_paths = false;
        let e = solver.run(&InitialLaw::GammaRho(sol.clone()), 10_000, &grid, 21).unwrap();
        let d = sup_cdf_distance(&e.terminal, |v| sol.cdf(v).unwrap());
        assert!(d < 0.03, "sup distance {d}");
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.1, 0.01).unwrap();
        let e = simulate_mckean_vlasov(&spec, &InitialLaw::Point(0.5), 4, &grid, 1).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(text.starts_with("t,empirical_mean,empirical_second_moment\n0,0.5,0.25\n"));
    }
}
