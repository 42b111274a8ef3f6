use std::path::PathBuf;

use serde::Serialize;
use serde_json::Value;

use super::functional::TestFunctional;
use crate::coefficients::CoefficientSpec;
use crate::config::ConfigMap;
use crate::error::{Error, Result};
use crate::sde_sim::{MigrationMatrix, Topology};

pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentitySettings {
    /// Start level of the excursion-area estimator.
    pub eps: f64,
    pub area_dt: f64,
    /// Paths are stopped after this much time.
    pub max_time: f64,
    pub split_cap: f64,
    /// `N` of the Q-mass estimator, which starts at `1/N`.
    pub q_n: f64,
    pub q_delta: f64,
    pub q_dt: f64,
    /// Length of the stationary immigration run.
    pub window: f64,
    pub bins: Vec<f64>,
}

impl Default for IdentitySettings {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            area_dt: 1e-3,
            max_time: 50.0,
            split_cap: 0.128,
            q_n: 1e4,
            q_delta: 0.1,
            q_dt: 1e-4,
            window: 10.0,
            bins: vec![0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualitySettings {
    pub x: f64,
    pub y: f64,
    pub npart: usize,
    pub mv_replicates: usize,
    /// Also rerun with each of `dt`, `δ` doubled and `Npart` halved.
    pub refine: bool,
}

impl Default for DualitySettings {
    fn default() -> Self {
        Self { x: 1.0, y: 1.0, npart: 2000, mv_replicates: 10_000, refine: false }
    }
}

/// Fully resolved experiment settings. Every field has a default, so a
/// config file only needs the coefficient spec.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub spec: CoefficientSpec,
    pub seed: u64,
    pub replicates: usize,
    pub dt: f64,
    pub delta: f64,
    pub horizon: f64,
    pub islands: usize,
    /// Explicit migration matrix; uniform `1/N` migration when absent.
    pub migration: Option<Vec<Vec<f64>>>,
    /// Total immigration rate of the convergence experiment; comparisons
    /// run without immigration.
    pub theta: f64,
    pub x0: Vec<f64>,
    pub functionals: Vec<TestFunctional>,
    pub loop_free_levels: usize,
    pub loop_free_replicates: usize,
    pub ladder: Vec<usize>,
    pub tent: (f64, f64),
    pub identity: IdentitySettings,
    pub duality: DualitySettings,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn for_spec(spec: CoefficientSpec) -> Self {
        Self {
            spec,
            seed: 0,
            replicates: 1000,
            dt: 1e-3,
            delta: 0.02,
            horizon: 1.0,
            islands: 20,
            migration: None,
            theta: 1.0,
            x0: vec![1.0],
            functionals: [0.5, 1.0, 2.0].iter().flat_map(|&l| [0.5, 1.0].map(|t| TestFunctional::exp(l, t))).collect(),
            loop_free_levels: 10,
            loop_free_replicates: 10_000,
            ladder: vec![1, 10, 50, 200],
            tent: (0.5, 1.5),
            identity: IdentitySettings::default(),
            duality: DualitySettings::default(),
            out_dir: None,
        }
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let spec = CoefficientSpec::from_config(map)?;
        let mut c = Self::for_spec(spec);
        let usize_or = |key: &str, d: usize| map.u64_or(key, d as u64).map(|v| v as usize);
        c.seed = map.u64_or("seed", c.seed)?;
        c.replicates = usize_or("replicates", c.replicates)?;
        c.dt = map.f64_or("dt", c.dt)?;
        c.delta = map.f64_or("delta", c.delta)?;
        c.horizon = map.f64_or("horizon", c.horizon)?;
        c.islands = usize_or("islands", c.islands)?;
        c.migration = map.matrix("migration")?;
        c.theta = map.f64_or("theta", c.theta)?;
        if let Some(x0) = map.f64_list("x0")? {
            c.x0 = x0;
        }
        if let Some(v) = map.get("functionals") {
            c.functionals =
                serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("bad `functionals`: {e}")))?;
        }
        c.loop_free_levels = usize_or("loop_free.levels", c.loop_free_levels)?;
        c.loop_free_replicates = usize_or("loop_free.replicates", c.loop_free_replicates)?;
        if let Some(l) = map.f64_list("ladder")? {
            c.ladder = l.iter().map(|&n| n as usize).collect();
        }
        if let Some(t) = map.f64_list("tent")? {
            let [lo, hi] = t[..] else {
                return Err(Error::Config("`tent` must be [lo, hi]".into()));
            };
            c.tent = (lo, hi);
        }
        let id = &mut c.identity;
        id.eps = map.f64_or("identity.eps", id.eps)?;
        id.area_dt = map.f64_or("identity.area_dt", id.area_dt)?;
        id.max_time = map.f64_or("identity.max_time", id.max_time)?;
        id.split_cap = map.f64_or("identity.split_cap", id.split_cap)?;
        id.q_n = map.f64_or("identity.q_n", id.q_n)?;
        id.q_delta = map.f64_or("identity.q_delta", id.q_delta)?;
        id.q_dt = map.f64_or("identity.q_dt", id.q_dt)?;
        id.window = map.f64_or("identity.window", id.window)?;
        if let Some(b) = map.f64_list("identity.bins")? {
            id.bins = b;
        }
        let du = &mut c.duality;
        du.x = map.f64_or("duality.x", du.x)?;
        du.y = map.f64_or("duality.y", du.y)?;
        du.npart = usize_or("duality.npart", du.npart)?;
        du.mv_replicates = usize_or("duality.mv_replicates", du.mv_replicates)?;
        du.refine = map.bool_or("duality.refine", du.refine)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.replicates < MIN_REPLICATES {
            return bad(format!("replicates = {} is below the minimum {MIN_REPLICATES}", self.replicates));
        }
        for (name, v) in [("dt", self.dt), ("delta", self.delta), ("horizon", self.horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("`{name}` must be positive and finite, got {v}"));
            }
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad(format!("`theta` must be nonnegative, got {}", self.theta));
        }
        if self.islands == 0 {
            return bad("`islands` must be positive".into());
        }
        if let Some(m) = &self.migration {
            if m.len() != self.islands {
                return bad(format!("migration matrix has {} rows for {} islands", m.len(), self.islands));
            }
        }
        if self.x0.len() > self.islands || self.x0.iter().any(|&x| !self.spec.domain.contains(x)) {
            return bad("`x0` must fit the islands and lie in the domain".into());
        }
        for f in &self.functionals {
            f.validate()?;
            if f.times().iter().any(|&t| t > self.horizon) {
                return bad(format!("{f} is evaluated after the horizon {}", self.horizon));
            }
        }
        if !(self.tent.0 > 0.0 && self.tent.1 > self.tent.0) {
            return bad("`tent` must satisfy 0 < lo < hi".into());
        }
        if self.ladder.is_empty() || self.ladder.contains(&0) {
            return bad("`ladder` must list positive island counts".into());
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        Ok(match &self.migration {
            None => Topology::Uniform(self.islands),
            Some(rows) => Topology::Matrix(MigrationMatrix::new(rows.clone())?),
        })
    }

    /// `x0` padded with empty islands up to `n`.
    pub fn initial_state(&self, n: usize) -> Result<Vec<f64>> {
        if self.x0.len() > n {
            return Err(Error::Config(format!("{} initial masses for {n} islands", self.x0.len())));
        }
        let mut x = self.x0.clone();
        x.resize(n, 0.0);
        Ok(x)
    }

    /// The resolved settings as JSON, embedded in every report.
    pub fn resolved(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
