use serde::Serialize;

use crate::error::{Error, Result};

/// Uniform time grid `t0, t0 + dt, …, horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, dt: f64) -> Result<Self> {
        if !(t0 >= 0.0 && horizon > t0 && dt > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!(
                "time grid needs 0 ≤ t0 < horizon and dt > 0, got t0={t0}, horizon={horizon}, dt={dt}"
            )));
        }
        let ratio = (horizon - t0) / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-6 * steps.max(1.0) {
            return Err(Error::Config(format!("(horizon − t0)/dt = {ratio} is not a positive integer")));
        }
        Ok(Self { t0, horizon, dt, steps: steps as usize })
    }

    /// Grid on `[0, horizon]` whose step is the largest divisor of `horizon`
    /// not exceeding `dt`.
    pub fn covering(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && dt > 0.0) {
            return Err(Error::Config(format!("need horizon > 0 and dt > 0, got {horizon}, {dt}")));
        }
        let steps = (horizon / dt - 1e-9).ceil().max(1.0);
        Self::new(0.0, horizon, horizon / steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.t0 + i as f64 * self.dt
        }
    }

    /// Index of the node nearest to `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if !(t >= self.t0 - 1e-9 * self.dt && t <= self.horizon + 1e-9 * self.dt) {
            return Err(Error::Domain(format!("t = {t} outside [{}, {}]", self.t0, self.horizon)));
        }
        Ok((((t - self.t0) / self.dt).round() as usize).min(self.steps))
    }
}

/// One trajectory sampled at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl Path {
    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, values: vec![0.0; grid.nodes()] }
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Linear interpolation at time `t`; an error outside the grid.
    pub fn at(&self, t: f64) -> Result<f64> {
        let g = &self.grid;
        if !(t >= g.t0() && t <= g.horizon() + 1e-12) {
            return Err(Error::Domain(format!("t = {t} outside [{}, {}]", g.t0(), g.horizon())));
        }
        Ok(interpolate(&self.values, g.dt(), t - g.t0()))
    }

    /// Trapezoid integral over the whole grid.
    pub fn area(&self) -> f64 {
        trapezoid(&self.values, self.grid.dt())
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Piecewise-linear value of equally spaced samples at offset `tau ≥ 0`;
/// zero past the last sample.
#[inline]
pub fn interpolate(values: &[f64], dt: f64, tau: f64) -> f64 {
    let pos = tau / dt;
    let i = pos.floor() as usize;
    if i + 1 < values.len() {
        let frac = pos - i as f64;
        values[i] + frac * (values[i + 1] - values[i])
    } else if i + 1 == values.len() && pos - i as f64 <= 1e-9 {
        values[i]
    } else {
        0.0
    }
}

pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dt * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}
