use rand::Rng;
use serde::Serialize;

use crate::analytics::ScaleProfile;
use crate::coefficients::CoefficientSpec;
use crate::error::{Error, Result};
use crate::quad::QuadratureConfig;
use crate::rng::stream;
use crate::sde_sim::{Path, Scheme, Stepper, TimeGrid};

/// Ratio between the rejection sampler's start level and the cutoff `δ`.
pub const START_FRACTION: f64 = 1e-3;
const MAX_ATTEMPTS: u64 = 100_000_000;

/// An excursion away from zero, anchored at its first crossing of `δ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Excursion {
    pub path: Path,
    /// Local time of absorption at 0; `None` if the horizon came first.
    pub extinction_time: Option<f64>,
    pub peak: f64,
    pub area: f64,
    pub censored: bool,
    /// Rejection-sampler attempts spent on this excursion.
    pub attempts: u64,
}

/// `Q(sup χ ≥ δ) = 1/S(δ)`.
pub fn excursion_mass_above(spec: &CoefficientSpec, delta: f64, q: &QuadratureConfig) -> Result<f64> {
    check_cutoff(spec, delta)?;
    let s = ScaleProfile::new(spec, q)?.scale(delta, q)?;
    Ok(1.0 / s)
}

pub(crate) fn check_cutoff(spec: &CoefficientSpec, delta: f64) -> Result<()> {
    if delta > 0.0 && delta < spec.upper() {
        Ok(())
    } else {
        Err(Error::Domain(format!("cutoff δ = {delta} outside (0, {})", spec.upper())))
    }
}

/// Runs `x` forward until it hits 0 or `max_steps` elapse, recording every node.
pub(crate) fn run_from<R: Rng + ?Sized>(st: &Stepper, x0: f64, max_steps: usize, rng: &mut R) -> Vec<f64> {
    let mut values = Vec::with_capacity(64);
    values.push(x0);
    let mut x = x0;
    for _ in 0..max_steps {
        if x == 0.0 {
            break;
        }
        x = st.step(x, 0.0, rng);
        values.push(x);
    }
    values
}

/// One attempt of the rejection sampler: start at `ε`, stop at 0 or at `δ`.
/// Returns the crossing value on success.
pub(crate) fn attempt_crossing<R: Rng + ?Sized>(
    st: &Stepper,
    eps: f64,
    delta: f64,
    max_steps: usize,
    rng: &mut R,
) -> Option<f64> {
    let mut x = eps;
    for _ in 0..max_steps {
        x = st.step(x, 0.0, rng);
        if x >= delta {
            return Some(x);
        }
        if x == 0.0 {
            return None;
        }
    }
    None
}

pub(crate) fn into_excursion(values: Vec<f64>, dt: f64, attempts: u64) -> Excursion {
    let steps = values.len() - 1;
    let absorbed = *values.last().unwrap() == 0.0;
    let grid = TimeGrid::new(0.0, (steps.max(1)) as f64 * dt, dt).expect("positive step count");
    let mut values = values;
    if steps == 0 {
        values.push(values[0]);
    }
    let path = Path { grid, values };
    Excursion {
        extinction_time: absorbed.then_some(steps as f64 * dt),
        peak: path.peak(),
        area: path.area(),
        censored: !absorbed,
        path,
        attempts,
    }
}

/// Samples `Q(· | sup ≥ δ)`: paths from `ε = δ·10⁻³` are rejected until one
/// reaches `δ` before 0; the accepted path is re-anchored at that crossing
/// and run until absorption or until the grid's horizon has elapsed.
pub fn sample_excursion(spec: &CoefficientSpec, delta: f64, grid: &TimeGrid, seed: u64) -> Result<Excursion> {
    sample_excursion_with(spec, Scheme::default(), delta, grid, seed)
}

pub fn sample_excursion_with(
    spec: &CoefficientSpec,
    scheme: Scheme,
    delta: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Excursion> {
    check_cutoff(spec, delta)?;
    let st = Stepper::new(spec, grid.dt(), scheme);
    let mut rng = stream(seed, &[0xe7c0]);
    let eps = delta * START_FRACTION;
    for attempt in 1..=MAX_ATTEMPTS {
        if let Some(start) = attempt_crossing(&st, eps, delta, grid.steps(), &mut rng) {
            let values = run_from(&st, start, grid.steps(), &mut rng);
            return Ok(into_excursion(values, grid.dt(), attempt));
        }
    }
    Err(Error::Simulation(format!("no excursion reached δ = {delta} in {MAX_ATTEMPTS} attempts")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feller_mass_above() {
        let spec = CoefficientSpec::feller(0.0, 1.0).unwrap();
        let q = QuadratureConfig::default();
        for d in [0.01, 0.1, 1.0] {
            let got = excursion_mass_above(&spec, d, &q).unwrap();
            assert!((got * (d.exp() - 1.0) - 1.0).abs() < 1e-8);
        }
        assert!(excursion_mass_above(&spec, 1e-8, &q).unwrap() > 1e7);
        assert!(excursion_mass_above(&spec, 0.0, &q).is_err());
    }

    #[test]
    fn sampled_excursions_reach_the_cutoff() {
        let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 50.0, 1e-3).unwrap();
        for seed in 0..20 {
            let e = sample_excursion(&spec, 0.05, &grid, seed).unwrap();
            assert!(e.peak >= 0.05);
            assert!(!e.censored);
            assert_eq!(e.path.last(), 0.0);
            assert!(e.path.values[..e.path.values.len() - 1].iter().all(|&v| v > 0.0));
        }
    }
}
