use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::grid::{Path, TimeGrid};
use super::scheme::{Scheme, Stepper};
use crate::coefficients::{CoefficientSpec, DiffusionFamily};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Stream label used for unsplit (level-free) islands.
pub const NO_LEVEL: u64 = u64::MAX;

/// Immigration rate `ζ(t)` feeding a single island.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ImmigrationProfile {
    Constant(f64),
    /// One rate per grid step, held constant over the step.
    Table(Vec<f64>),
    /// `scale · path(t)`, e.g. the level-(k−1) total divided by `N`.
    PathReference {
        path: Path,
        scale: f64,
    },
}

impl ImmigrationProfile {
    fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let bad = |v: f64| !(v >= 0.0 && v.is_finite());
        match self {
            Self::Constant(c) if bad(*c) => Err(Error::Config(format!("immigration rate {c} must be nonnegative"))),
            Self::Table(t) if t.len() < grid.steps() => {
                Err(Error::Config(format!("immigration table has {} entries for {} steps", t.len(), grid.steps())))
            }
            Self::Table(t) if t.iter().any(|&v| bad(v)) => {
                Err(Error::Config("immigration table must be nonnegative".into()))
            }
            Self::PathReference { path, scale } => {
                if bad(*scale) {
                    return Err(Error::Config("immigration scale must be nonnegative".into()));
                }
                if path.grid.dt() != grid.dt() || path.grid.nodes() < grid.nodes() {
                    return Err(Error::Config("reference path does not cover the grid".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Rate over step `n` (left endpoint).
    #[inline]
    pub fn rate(&self, n: usize) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Table(t) => t[n],
            Self::PathReference { path, scale } => scale * path.values[n],
        }
    }
}

/// Migration matrix `m(j, i)`, stored row-major with rows indexed by the source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrationMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl MigrationMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config("migration matrix must be square and nonempty".into()));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("row {j} of the migration matrix has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + 1e-12 {
                return Err(Error::Config(format!("row {j} of the migration matrix sums to {sum} > 1")));
            }
        }
        Ok(Self { n, entries: rows.into_iter().flatten().collect() })
    }

    pub fn uniform(n: usize) -> Self {
        Self { n, entries: vec![1.0 / n as f64; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        (0..n).for_each(|i| entries[i * n + i] = 1.0);
        Self { n, entries }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// `m(j, i)`: rate from `j` to `i`.
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.entries[j * self.n + i]
    }

    /// `out[i] = Σ_j x[j] m(j, i)`.
    fn inflow(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let row = &self.entries[j * self.n..(j + 1) * self.n];
            for (o, &m) in out.iter_mut().zip(row) {
                *o += xj * m;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Topology {
    Uniform(usize),
    Matrix(MigrationMatrix),
}

impl Topology {
    pub fn size(&self) -> usize {
        match self {
            Topology::Uniform(n) => *n,
            Topology::Matrix(m) => m.size(),
        }
    }
}

/// Trajectories of every island, optionally split by migration level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemPath {
    pub grid: TimeGrid,
    /// Island totals; with levels present these are the level sums.
    pub islands: Vec<Path>,
    /// `levels[i][k]`: mass on island `i` whose lineage migrated `k` times.
    pub levels: Option<Vec<Vec<Path>>>,
    /// Mass that would have entered level `kmax + 1`, integrated over time.
    pub dropped_mass: f64,
    /// Set when the level split is run with a nonlinear `σ²`.
    pub experimental: bool,
}

impl SystemPath {
    pub fn total_mass(&self, node: usize) -> f64 {
        self.islands.iter().map(|p| p.values[node]).sum()
    }

    pub fn values_at(&self, node: usize) -> Vec<f64> {
        self.islands.iter().map(|p| p.values[node]).collect()
    }
}

fn island_streams(seed: u64, n: usize, level: u64) -> Vec<ChaCha8Rng> {
    (0..n).map(|i| stream(seed, &[i as u64, level])).collect()
}

fn check_state(spec: &CoefficientSpec, x0: &[f64]) -> Result<()> {
    if x0.is_empty() {
        return Err(Error::Config("at least one island is required".into()));
    }
    match x0.iter().find(|&&x| !spec.domain.contains(x)) {
        Some(x) => Err(Error::Domain(format!("initial value {x} outside [0, {}]", spec.upper()))),
        None => Ok(()),
    }
}

/// Single-island and island-system simulations for one coefficient spec.
#[derive(Debug, Clone, Copy)]
pub struct Simulator<'a> {
    pub spec: &'a CoefficientSpec,
    pub scheme: Scheme,
}

impl<'a> Simulator<'a> {
    pub fn new(spec: &'a CoefficientSpec) -> Self {
        Self { spec, scheme: Scheme::default() }
    }

    pub fn with_scheme(spec: &'a CoefficientSpec, scheme: Scheme) -> Self {
        Self { spec, scheme }
    }

    pub fn stepper(&self, dt: f64) -> Stepper<'a> {
        Stepper::new(self.spec, dt, self.scheme)
    }

    /// `dY = (−Y + μ(Y))dt + √σ²(Y) dB`; zero is a trap.
    pub fn single(&self, x0: f64, grid: &TimeGrid, seed: u64) -> Result<Path> {
        self.with_immigration(&ImmigrationProfile::Constant(0.0), x0, grid.t0(), grid, seed)
    }

    /// `dY = (ζ(t) − Y + μ(Y))dt + √σ²(Y) dB`, started at `x0` at time `s`.
    /// Nodes before `s` hold 0.
    pub fn with_immigration(
        &self,
        zeta: &ImmigrationProfile,
        x0: f64,
        s: f64,
        grid: &TimeGrid,
        seed: u64,
    ) -> Result<Path> {
        check_state(self.spec, &[x0])?;
        zeta.validate(grid)?;
        let start = grid.index_of(s)?;
        let st = self.stepper(grid.dt());
        let mut rng = stream(seed, &[0, NO_LEVEL]);
        let mut path = Path::zeros(*grid);
        let mut x = x0;
        path.values[start] = x;
        for n in start..grid.steps() {
            x = st.step(x, zeta.rate(n), &mut rng);
            path.values[n + 1] = x;
        }
        Ok(path)
    }

    /// Drives the uniform `N`-island system (immigration `θ/N` per island)
    /// and calls `observe(node, state)` at every node.
    pub fn drive_uniform<F: FnMut(usize, &[f64])>(
        &self,
        theta: f64,
        x: &mut [f64],
        grid: &TimeGrid,
        seed: u64,
        mut observe: F,
    ) {
        let n = x.len();
        let st = self.stepper(grid.dt());
        let mut rngs = island_streams(seed, n, NO_LEVEL);
        let immigration = theta / n as f64;
        observe(0, x);
        for node in 1..=grid.steps() {
            let inflow = x.iter().sum::<f64>() / n as f64 + immigration;
            for (xi, rng) in x.iter_mut().zip(rngs.iter_mut()) {
                *xi = st.step(*xi, inflow, rng);
            }
            observe(node, x);
        }
    }

    /// Drives the `(G, m, μ, σ²)` system with optional immigration per island.
    pub fn drive_matrix<F: FnMut(usize, &[f64])>(
        &self,
        m: &MigrationMatrix,
        immigration: f64,
        x: &mut [f64],
        grid: &TimeGrid,
        seed: u64,
        mut observe: F,
    ) {
        let st = self.stepper(grid.dt());
        let mut rngs = island_streams(seed, x.len(), NO_LEVEL);
        let mut inflow = vec![0.0; x.len()];
        observe(0, x);
        for node in 1..=grid.steps() {
            m.inflow(x, &mut inflow);
            for ((xi, rng), &inf) in x.iter_mut().zip(rngs.iter_mut()).zip(&inflow) {
                *xi = st.step(*xi, inf + immigration, rng);
            }
            observe(node, x);
        }
    }

    pub fn system(&self, m: &MigrationMatrix, x0: &[f64], grid: &TimeGrid, seed: u64) -> Result<SystemPath> {
        check_state(self.spec, x0)?;
        if x0.len() != m.size() {
            return Err(Error::Config(format!("{} initial values for a {}-island matrix", x0.len(), m.size())));
        }
        let mut x = x0.to_vec();
        let mut rec = Recorder::new(*grid, x.len());
        self.drive_matrix(m, 0.0, &mut x, grid, seed, |node, s| rec.record(node, s));
        Ok(rec.finish())
    }

    pub fn uniform_system(&self, n: usize, theta: f64, x0: &[f64], grid: &TimeGrid, seed: u64) -> Result<SystemPath> {
        check_state(self.spec, x0)?;
        check_theta(theta)?;
        if x0.len() != n {
            return Err(Error::Config(format!("{} initial values for {n} islands", x0.len())));
        }
        let mut x = x0.to_vec();
        let mut rec = Recorder::new(*grid, n);
        self.drive_uniform(theta, &mut x, grid, seed, |node, s| rec.record(node, s));
        Ok(rec.finish())
    }

    /// Uniform system with every island's mass split by migration level.
    /// Level `k` receives the island-averaged level-`(k−1)` mass, level 0 the
    /// immigration; drift and variance are shared in proportion to the level's
    /// fraction of the island total.
    pub fn level_system(
        &self,
        n: usize,
        theta: f64,
        x0: &[f64],
        kmax: usize,
        grid: &TimeGrid,
        seed: u64,
    ) -> Result<SystemPath> {
        check_state(self.spec, x0)?;
        check_theta(theta)?;
        if x0.len() != n {
            return Err(Error::Config(format!("{} initial values for {n} islands", x0.len())));
        }
        let nl = kmax + 1;
        let st = self.stepper(grid.dt());
        let dt = grid.dt();
        let upper = self.spec.upper();
        let mut x = vec![0.0; n * nl];
        for (i, &v) in x0.iter().enumerate() {
            x[i * nl] = v;
        }
        let mut rngs: Vec<ChaCha8Rng> =
            (0..n * nl).map(|idx| stream(seed, &[(idx / nl) as u64, (idx % nl) as u64])).collect();
        let mut means = vec![0.0; nl];
        let mut rec = LevelRecorder::new(*grid, n, nl);
        rec.record(0, &x);
        let mut dropped = 0.0;
        for node in 1..=grid.steps() {
            level_means(&x, n, nl, &mut means);
            dropped += means[kmax] * n as f64 * dt;
            for i in 0..n {
                let cell = &mut x[i * nl..(i + 1) * nl];
                let total: f64 = cell.iter().sum();
                let (mu, s2) = if total > 0.0 { (self.spec.mu(total), self.spec.sigma2(total)) } else { (0.0, 0.0) };
                for (k, xk) in cell.iter_mut().enumerate() {
                    let inflow = if k == 0 { theta / n as f64 } else { means[k - 1] };
                    let share = if total > 0.0 { *xk / total } else { 0.0 };
                    let m = *xk + (inflow - *xk + share * mu) * dt;
                    let v = share * s2 * dt;
                    *xk = st.advance(m, v, &mut rngs[i * nl + k]);
                }
                // Levels are clamped one by one, so on a bounded domain the
                // island total can overshoot; project it back proportionally.
                let total: f64 = cell.iter().sum();
                if total > upper {
                    cell.iter_mut().for_each(|xk| *xk *= upper / total);
                    let excess = cell.iter().sum::<f64>() - upper;
                    if let Some(big) = cell.iter_mut().max_by(|a, b| a.total_cmp(b)) {
                        *big = (*big - excess.max(0.0)).max(0.0);
                    }
                }
            }
            rec.record(node, &x);
        }
        let experimental = !matches!(self.spec.diffusion, DiffusionFamily::Linear { .. });
        Ok(rec.finish(dropped, experimental))
    }

    /// Loop-free system: level `k` is fed by level `k−1` only, and each level
    /// evolves with its own drift and variance.
    pub fn loop_free(
        &self,
        topology: &Topology,
        theta: f64,
        x0: &[f64],
        kmax: usize,
        grid: &TimeGrid,
        seed: u64,
    ) -> Result<SystemPath> {
        check_state(self.spec, x0)?;
        check_theta(theta)?;
        let n = topology.size();
        if x0.len() != n {
            return Err(Error::Config(format!("{} initial values for {n} islands", x0.len())));
        }
        let nl = kmax + 1;
        let st = self.stepper(grid.dt());
        let dt = grid.dt();
        let mut x = vec![0.0; n * nl];
        for (i, &v) in x0.iter().enumerate() {
            x[i * nl] = v;
        }
        let mut rngs: Vec<ChaCha8Rng> =
            (0..n * nl).map(|idx| stream(seed, &[(idx / nl) as u64, (idx % nl) as u64])).collect();
        let immigration = theta / n as f64;
        let mut rec = LevelRecorder::new(*grid, n, nl);
        rec.record(0, &x);
        let mut dropped = 0.0;
        let mut means = vec![0.0; nl];
        let mut level_in = vec![vec![0.0; n]; nl];
        let mut level_x = vec![0.0; n];
        for node in 1..=grid.steps() {
            match topology {
                Topology::Uniform(_) => {
                    level_means(&x, n, nl, &mut means);
                    for k in 0..nl {
                        let v = if k == 0 { 0.0 } else { means[k - 1] };
                        level_in[k].iter_mut().for_each(|o| *o = v);
                    }
                    dropped += means[kmax] * n as f64 * dt;
                }
                Topology::Matrix(m) => {
                    for k in 0..nl {
                        if k == 0 {
                            level_in[0].iter_mut().for_each(|o| *o = 0.0);
                            continue;
                        }
                        level_x.iter_mut().enumerate().for_each(|(i, v)| *v = x[i * nl + k - 1]);
                        m.inflow(&level_x, &mut level_in[k]);
                    }
                    level_x.iter_mut().enumerate().for_each(|(i, v)| *v = x[i * nl + kmax]);
                    let out: f64 = (0..n).map(|j| level_x[j] * (0..n).map(|i| m.get(j, i)).sum::<f64>()).sum();
                    dropped += out * dt;
                }
            }
            for (idx, (xi, rng)) in x.iter_mut().zip(rngs.iter_mut()).enumerate() {
                let (i, k) = (idx / nl, idx % nl);
                let inflow = level_in[k][i] + if k == 0 { immigration } else { 0.0 };
                *xi = st.step(*xi, inflow, rng);
            }
            rec.record(node, &x);
        }
        Ok(rec.finish(dropped, false))
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta >= 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("immigration rate θ must be nonnegative, got {theta}")))
    }
}

fn level_means(x: &[f64], n: usize, nl: usize, means: &mut [f64]) {
    means.iter_mut().for_each(|m| *m = 0.0);
    for cell in x.chunks_exact(nl) {
        for (m, &v) in means.iter_mut().zip(cell) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
}

struct Recorder {
    grid: TimeGrid,
    islands: Vec<Path>,
}

impl Recorder {
    fn new(grid: TimeGrid, n: usize) -> Self {
        Self { grid, islands: vec![Path::zeros(grid); n] }
    }

    fn record(&mut self, node: usize, x: &[f64]) {
        for (p, &v) in self.islands.iter_mut().zip(x) {
            p.values[node] = v;
        }
    }

    fn finish(self) -> SystemPath {
        SystemPath { grid: self.grid, islands: self.islands, levels: None, dropped_mass: 0.0, experimental: false }
    }
}

struct LevelRecorder {
    grid: TimeGrid,
    nl: usize,
    levels: Vec<Vec<Path>>,
}

impl LevelRecorder {
    fn new(grid: TimeGrid, n: usize, nl: usize) -> Self {
        Self { grid, nl, levels: vec![vec![Path::zeros(grid); nl]; n] }
    }

    fn record(&mut self, node: usize, x: &[f64]) {
        for (cell, paths) in x.chunks_exact(self.nl).zip(self.levels.iter_mut()) {
            for (p, &v) in paths.iter_mut().zip(cell) {
                p.values[node] = v;
            }
        }
    }

    fn finish(self, dropped_mass: f64, experimental: bool) -> SystemPath {
        let islands = self
            .levels
            .iter()
            .map(|paths| {
                let mut total = Path::zeros(self.grid);
                for p in paths {
                    for (t, v) in total.values.iter_mut().zip(&p.values) {
                        *t += v;
                    }
                }
                total
            })
            .collect();
        SystemPath { grid: self.grid, islands, levels: Some(self.levels), dropped_mass, experimental }
    }
}

pub fn simulate_single(spec: &CoefficientSpec, x0: f64, grid: &TimeGrid, seed: u64) -> Result<Path> {
    Simulator::new(spec).single(x0, grid, seed)
}

pub fn simulate_with_immigration(
    spec: &CoefficientSpec,
    zeta: &ImmigrationProfile,
    x0: f64,
    s: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Path> {
    Simulator::new(spec).with_immigration(zeta, x0, s, grid, seed)
}

pub fn simulate_system(
    spec: &CoefficientSpec,
    m: &MigrationMatrix,
    x0: &[f64],
    grid: &TimeGrid,
    seed: u64,
) -> Result<SystemPath> {
    Simulator::new(spec).system(m, x0, grid, seed)
}

pub fn simulate_uniform_system(
    spec: &CoefficientSpec,
    n: usize,
    theta: f64,
    x0: &[f64],
    grid: &TimeGrid,
    seed: u64,
) -> Result<SystemPath> {
    Simulator::new(spec).uniform_system(n, theta, x0, grid, seed)
}

pub fn simulate_level_system(
    spec: &CoefficientSpec,
    n: usize,
    theta: f64,
    x0: &[f64],
    kmax: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<SystemPath> {
    Simulator::new(spec).level_system(n, theta, x0, kmax, grid, seed)
}

pub fn simulate_loop_free(
    spec: &CoefficientSpec,
    topology: &Topology,
    theta: f64,
    x0: &[f64],
    kmax: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<SystemPath> {
    Simulator::new(spec).loop_free(topology, theta, x0, kmax, grid, seed)
}
