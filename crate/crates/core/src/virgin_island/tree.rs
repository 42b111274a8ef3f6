use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use super::excursion::{attempt_crossing, check_cutoff, excursion_mass_above, run_from, START_FRACTION};
use crate::coefficients::CoefficientSpec;
use crate::error::{Error, Result};
use crate::quad::QuadratureConfig;
use crate::rng::stream;
use crate::sde_sim::{interpolate, Scheme, Stepper};

/// How daughter excursions are drawn from `Q(· | sup ≥ δ)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum ExcursionMode {
    /// Start the daughter at `δ`. After its first crossing of `δ` a
    /// `Q`-excursion is the diffusion started there, so this is the
    /// anchored law without the rejection cost.
    #[default]
    StrongMarkov,
    /// Rejection from `δ·10⁻³`, anchored at the first crossing.
    Rejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TreeConfig {
    pub theta: f64,
    pub delta: f64,
    pub horizon: f64,
    pub dt: f64,
    pub generation_cap: usize,
    pub mode: ExcursionMode,
    pub scheme: Scheme,
}

impl TreeConfig {
    pub fn new(theta: f64, delta: f64, horizon: f64, dt: f64) -> Self {
        Self {
            theta,
            delta,
            horizon,
            dt,
            generation_cap: 50,
            mode: ExcursionMode::default(),
            scheme: Scheme::default(),
        }
    }

    fn validate(&self, spec: &CoefficientSpec) -> Result<()> {
        check_cutoff(spec, self.delta)?;
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("θ must be nonnegative, got {}", self.theta)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite() && self.dt > 0.0) {
            return Err(Error::Config("tree horizon and dt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Island {
    pub id: usize,
    pub parent: Option<usize>,
    pub generation: usize,
    /// Colonisation time.
    pub birth: f64,
    /// Local-time samples `χ_0, χ_dt, …`, covering at least `[0, horizon − birth]`.
    pub values: Vec<f64>,
    /// Local time of absorption, if it happened before the horizon.
    pub extinction_time: Option<f64>,
    pub peak: f64,
    /// `∫ χ` over `[0, horizon − birth]`.
    pub area: f64,
}

impl Island {
    pub fn alive_at_horizon(&self) -> bool {
        self.extinction_time.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VirginIslandTree {
    pub islands: Vec<Island>,
    pub x_init: Vec<f64>,
    pub config: TreeConfig,
    /// `1/S(δ)`, the colonisation rate per unit of excursion mass.
    pub q_mass: f64,
    /// Births suppressed by the generation cap.
    pub dropped_births: u64,
    /// Excursions stopped by an internal step cap rather than absorption or the horizon.
    pub censored: usize,
}

/// Reusable tree sampler; `1/S(δ)` is computed once.
#[derive(Debug, Clone)]
pub struct TreeBuilder<'a> {
    spec: &'a CoefficientSpec,
    cfg: TreeConfig,
    q_mass: f64,
    stepper: Stepper<'a>,
    steps_total: usize,
}

const ROOT_STREAM: u64 = u64::MAX - 1;
const PATH_TAG: u64 = 0;
const BIRTH_TAG: u64 = 1;

impl<'a> TreeBuilder<'a> {
    pub fn new(spec: &'a CoefficientSpec, cfg: TreeConfig) -> Result<Self> {
        cfg.validate(spec)?;
        let q_mass = excursion_mass_above(spec, cfg.delta, &QuadratureConfig::default())?;
        Ok(Self {
            spec,
            cfg,
            q_mass,
            stepper: Stepper::new(spec, cfg.dt, cfg.scheme),
            steps_total: (cfg.horizon / cfg.dt - 1e-9).ceil() as usize,
        })
    }

    pub fn q_mass(&self) -> f64 {
        self.q_mass
    }

    pub fn config(&self) -> &TreeConfig {
        &self.cfg
    }

    fn steps_after(&self, birth: f64) -> usize {
        ((self.cfg.horizon - birth) / self.cfg.dt - 1e-9).ceil().max(0.0) as usize
    }

    fn make_island(&self, id: usize, parent: Option<usize>, generation: usize, birth: f64, values: Vec<f64>) -> Island {
        let tau_max = self.cfg.horizon - birth;
        let dt = self.cfg.dt;
        let absorbed_at = values.iter().position(|&v| v == 0.0);
        let extinction_time = absorbed_at.map(|i| i as f64 * dt).filter(|&t| t <= tau_max + 1e-12);
        let peak = values.iter().copied().fold(0.0, f64::max);
        let area = truncated_area(&values, dt, tau_max);
        Island { id, parent, generation, birth, values, extinction_time, peak, area }
    }

    fn daughter_values<R: Rng + ?Sized>(&self, steps: usize, rng: &mut R) -> Vec<f64> {
        let start = match self.cfg.mode {
            ExcursionMode::StrongMarkov => self.cfg.delta,
            ExcursionMode::Rejection => {
                let eps = self.cfg.delta * START_FRACTION;
                // The pre-crossing piece is discarded, so its length is not
                // charged against the horizon.
                loop {
                    if let Some(x) = attempt_crossing(&self.stepper, eps, self.cfg.delta, self.steps_total, rng) {
                        break x;
                    }
                }
            }
        };
        run_from(&self.stepper, start, steps, rng)
    }

    /// Builds one tree. Roots are the diffusions started from each positive
    /// `x_init[k]` plus immigrant excursions at rate `θ/S(δ)`; every island
    /// `(s, χ)` then colonises at rate `χ_{t−s}/S(δ)`, generation by generation.
    pub fn build(&self, x_init: &[f64], seed: u64) -> Result<VirginIslandTree> {
        if x_init.iter().any(|&x| !self.spec.domain.contains(x)) {
            return Err(Error::Domain("initial island masses must lie in the domain".into()));
        }
        let cfg = &self.cfg;
        let mut islands: Vec<Island> = Vec::new();
        for &x in x_init.iter().filter(|&&x| x > 0.0) {
            let id = islands.len();
            let mut rng = stream(seed, &[id as u64, PATH_TAG]);
            let values = run_from(&self.stepper, x, self.steps_total, &mut rng);
            islands.push(self.make_island(id, None, 0, 0.0, values));
        }
        let mut root_rng = stream(seed, &[ROOT_STREAM]);
        let immigrants = poisson(cfg.theta * cfg.horizon * self.q_mass, &mut root_rng);
        let mut births: Vec<f64> = (0..immigrants).map(|_| root_rng.random::<f64>() * cfg.horizon).collect();
        births.sort_by(f64::total_cmp);
        for s in births {
            let id = islands.len();
            let mut rng = stream(seed, &[id as u64, PATH_TAG]);
            let values = self.daughter_values(self.steps_after(s), &mut rng);
            islands.push(self.make_island(id, None, 0, s, values));
        }

        let mut dropped = 0u64;
        let mut next = 0;
        while next < islands.len() {
            let parent = &islands[next];
            let (pid, generation, birth) = (parent.id, parent.generation, parent.birth);
            let mut rng = stream(seed, &[pid as u64, BIRTH_TAG]);
            let count = poisson(self.q_mass * parent.area, &mut rng);
            if count > 0 {
                if generation + 1 > cfg.generation_cap {
                    dropped += count;
                } else {
                    let cum = cumulative_area(&parent.values, cfg.dt, cfg.horizon - birth);
                    let mut taus: Vec<f64> =
                        (0..count).map(|_| sample_birth(&parent.values, cfg.dt, &cum, rng.random::<f64>())).collect();
                    taus.sort_by(f64::total_cmp);
                    for tau in taus {
                        let s = (birth + tau).min(cfg.horizon);
                        let id = islands.len();
                        let mut prng = stream(seed, &[id as u64, PATH_TAG]);
                        let values = self.daughter_values(self.steps_after(s), &mut prng);
                        islands.push(self.make_island(id, Some(pid), generation + 1, s, values));
                    }
                }
            }
            next += 1;
        }
        Ok(VirginIslandTree {
            islands,
            x_init: x_init.to_vec(),
            config: *cfg,
            q_mass: self.q_mass,
            dropped_births: dropped,
            censored: 0,
        })
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
    } else {
        0
    }
}

/// Trapezoid area of the samples over `[0, tau_max]`, interpolating the last cell.
pub(crate) fn truncated_area(values: &[f64], dt: f64, tau_max: f64) -> f64 {
    cumulative_area(values, dt, tau_max).last().copied().unwrap_or(0.0)
}

/// `cum[j] = ∫₀^{min(j·dt, tau_max)} χ`, one entry per node that starts
/// inside `[0, tau_max]`, plus the end point.
fn cumulative_area(values: &[f64], dt: f64, tau_max: f64) -> Vec<f64> {
    let mut cum = vec![0.0];
    if tau_max <= 0.0 {
        return cum;
    }
    for j in 0..values.len().saturating_sub(1) {
        let lo = j as f64 * dt;
        if lo >= tau_max {
            break;
        }
        let h = dt.min(tau_max - lo);
        let (a, b) = (values[j], values[j + 1]);
        let end = a + (b - a) * h / dt;
        cum.push(cum.last().unwrap() + 0.5 * (a + end) * h);
    }
    cum
}

/// Inverse of the cumulative area at `u · total`; exact for the linear interpolant.
fn sample_birth(values: &[f64], dt: f64, cum: &[f64], u: f64) -> f64 {
    let total = *cum.last().unwrap();
    let r = u * total;
    let j = cum.partition_point(|&c| c <= r).clamp(1, cum.len() - 1) - 1;
    let rem = (r - cum[j]).max(0.0);
    let a = values[j];
    let c2 = (values[j + 1] - a) / (2.0 * dt);
    let disc = (a * a + 4.0 * c2 * rem).max(0.0);
    let denom = a + disc.sqrt();
    let tau = if denom > 0.0 { 2.0 * rem / denom } else { 0.0 };
    j as f64 * dt + tau.clamp(0.0, dt)
}

/// `build_tree` with a fresh builder; prefer [`TreeBuilder`] for repeated draws.
pub fn build_tree(spec: &CoefficientSpec, x_init: &[f64], cfg: TreeConfig, seed: u64) -> Result<VirginIslandTree> {
    TreeBuilder::new(spec, cfg)?.build(x_init, seed)
}

impl VirginIslandTree {
    fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.config.horizon + 1e-12 {
            Ok(())
        } else {
            Err(Error::Domain(format!("t = {t} outside [0, {}]", self.config.horizon)))
        }
    }

    fn mass_where<F: Fn(&Island) -> bool>(&self, t: f64, keep: F) -> f64 {
        self.islands
            .iter()
            .filter(|isl| isl.birth <= t && keep(isl))
            .map(|isl| interpolate(&isl.values, self.config.dt, t - isl.birth))
            .sum()
    }

    /// `V_t = Σ χ_{t−s}` over all islands.
    pub fn total_mass(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.mass_where(t, |_| true))
    }

    pub fn generation_mass(&self, n: usize, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.mass_where(t, |isl| isl.generation == n))
    }

    /// Island masses `χ_{t−s}` of every island born by `t`.
    pub fn masses_at(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        Ok(self
            .islands
            .iter()
            .filter(|isl| isl.birth <= t)
            .map(|isl| interpolate(&isl.values, self.config.dt, t - isl.birth))
            .collect())
    }

    pub fn max_generation(&self) -> usize {
        self.islands.iter().map(|i| i.generation).max().unwrap_or(0)
    }

    pub fn alive_at_horizon(&self) -> usize {
        self.islands.iter().filter(|i| i.alive_at_horizon()).count()
    }

    /// CSV `island_id,parent_id,generation,s,T0,peak,area`; roots have parent −1
    /// and islands alive at the horizon have `T0 = inf`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "island_id,parent_id,generation,s,T0,peak,area")?;
        for isl in &self.islands {
            let parent = isl.parent.map_or(-1, |p| p as i64);
            let t0 = isl.extinction_time.map_or("inf".to_string(), |t| t.to_string());
            writeln!(out, "{},{},{},{},{},{},{}", isl.id, parent, isl.generation, isl.birth, t0, isl.peak, isl.area)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_area_handles_partial_cell() {
        let v = [0.0, 1.0, 1.0, 0.0];
        let cum = cumulative_area(&v, 1.0, 3.0);
        assert_eq!(cum, vec![0.0, 0.5, 1.5, 2.0]);
        let cum = cumulative_area(&v, 1.0, 1.5);
        assert_eq!(cum, vec![0.0, 0.5, 1.0]);
        assert_eq!(truncated_area(&v, 1.0, 0.0), 0.0);
    }

    #[test]
    fn birth_sampler_inverts_the_area() {
        let v = [0.0, 2.0, 1.0, 0.0];
        let cum = cumulative_area(&v, 1.0, 3.0);
        for u in [0.01, 0.2, 0.5, 0.77, 0.99] {
            let tau = sample_birth(&v, 1.0, &cum, u);
            let area = truncated_area(&v, 1.0, tau);
            assert!((area - u * cum.last().unwrap()).abs() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn empty_input_gives_empty_tree() {
        let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
        let tree = build_tree(&spec, &[0.0, 0.0], TreeConfig::new(0.0, 0.05, 1.0, 1e-3), 1).unwrap();
        assert!(tree.islands.is_empty());
        assert_eq!(tree.total_mass(0.5).unwrap(), 0.0);
    }

    #[test]
    fn roots_and_generations() {
        let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
        let tree = build_tree(&spec, &[1.0, 2.0], TreeConfig::new(0.0, 0.05, 1.0, 1e-3), 3).unwrap();
        assert_eq!(tree.total_mass(0.0).unwrap(), 3.0);
        for t in [0.25, 0.5, 1.0] {
            let v = tree.total_mass(t).unwrap();
            let by_gen: f64 = (0..=tree.max_generation()).map(|n| tree.generation_mass(n, t).unwrap()).sum();
            assert!((v - by_gen).abs() < 1e-12);
        }
        for isl in &tree.islands[2..] {
            let parent = &tree.islands[isl.parent.unwrap()];
            assert_eq!(isl.generation, parent.generation + 1);
            assert!(isl.birth >= parent.birth);
            assert_eq!(isl.values[0], 0.05);
        }
        assert!(tree.total_mass(1.5).is_err());
    }

    #[test]
    fn rejection_mode_starts_at_or_above_cutoff() {
        let spec = CoefficientSpec::feller(0.0, 1.0).unwrap();
        let mut cfg = TreeConfig::new(0.0, 0.1, 0.5, 1e-3);
        cfg.mode = ExcursionMode::Rejection;
        let tree = build_tree(&spec, &[1.0], cfg, 9).unwrap();
        assert!(tree.islands.len() > 1);
        assert!(tree.islands[1..].iter().all(|i| i.values[0] >= 0.1));
    }
}
