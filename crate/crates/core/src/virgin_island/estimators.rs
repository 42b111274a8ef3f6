//! Monte Carlo estimators of excursion-measure identities. Both use
//! multilevel splitting: a particle crossing the next level `ε·2^k` for the
//! first time is replaced by two half-weight copies, which keeps the rare
//! large excursions well represented without biasing the estimate.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::excursion::check_cutoff;
use crate::analytics::ScaleProfile;
use crate::coefficients::CoefficientSpec;
use crate::error::{Error, Result};
use crate::quad::QuadratureConfig;
use crate::rng::stream;
use crate::sde_sim::{Scheme, Stepper};
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplittingConfig {
    pub dt: f64,
    /// Paths still running after this much time are stopped and counted.
    pub max_time: f64,
    /// Highest splitting level.
    pub split_cap: f64,
    pub scheme: Scheme,
    /// Interpolate crossings of the target level between grid points.
    pub bridge_correction: bool,
}

impl Default for SplittingConfig {
    fn default() -> Self {
        Self { dt: 1e-3, max_time: 100.0, split_cap: 0.15, scheme: Scheme::default(), bridge_correction: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityEstimate {
    pub estimate: Estimate,
    /// Particles stopped by `max_time`.
    pub capped: u64,
}

fn levels(start: f64, cap: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut l = 2.0 * start;
    while l <= cap {
        out.push(l);
        l *= 2.0;
    }
    out
}

struct Particle {
    x: f64,
    weight: f64,
    level: usize,
    step: usize,
}

/// Weighted `∫₀^∞ Y dt` from `Y_0 = eps` for one replicate.
fn area_replicate<R: Rng + ?Sized>(st: &Stepper, eps: f64, lv: &[f64], max_steps: usize, rng: &mut R) -> (f64, u64) {
    let dt = st.dt;
    let mut stack = vec![Particle { x: eps, weight: 1.0, level: 0, step: 0 }];
    let mut total = 0.0;
    let mut capped = 0;
    while let Some(mut p) = stack.pop() {
        let mut acc = 0.0;
        loop {
            if p.step >= max_steps {
                capped += 1;
                break;
            }
            let y = st.step(p.x, 0.0, rng);
            acc += 0.5 * (p.x + y);
            p.x = y;
            p.step += 1;
            if y == 0.0 {
                break;
            }
            if p.level < lv.len() && y >= lv[p.level] {
                total += p.weight * acc * dt;
                acc = 0.0;
                while p.level < lv.len() && y >= lv[p.level] {
                    p.level += 1;
                    p.weight *= 0.5;
                }
                stack.push(Particle { ..p });
            }
        }
        total += p.weight * acc * dt;
    }
    (total, capped)
}

/// Weighted indicator of reaching `delta` before 0 from `x0`.
fn hit_replicate<R: Rng + ?Sized>(
    st: &Stepper,
    x0: f64,
    delta: f64,
    lv: &[f64],
    max_steps: usize,
    bridge: bool,
    rng: &mut R,
) -> (f64, u64) {
    let mut stack = vec![Particle { x: x0, weight: 1.0, level: 0, step: 0 }];
    let mut hit = 0.0;
    let mut capped = 0;
    while let Some(mut p) = stack.pop() {
        loop {
            if p.step >= max_steps {
                capped += 1;
                break;
            }
            let (m, v) = st.moments(p.x, 0.0);
            let gaussian = st.is_gaussian(m, v);
            let y = st.advance(m, v, rng);
            p.step += 1;
            if y >= delta {
                hit += p.weight;
                break;
            }
            if bridge && gaussian && y > 0.0 {
                let cross = (-2.0 * (delta - p.x) * (delta - y) / v).exp();
                if rng.random::<f64>() < cross {
                    hit += p.weight;
                    break;
                }
            }
            p.x = y;
            if y == 0.0 {
                break;
            }
            if p.level < lv.len() && y >= lv[p.level] {
                while p.level < lv.len() && y >= lv[p.level] {
                    p.level += 1;
                    p.weight *= 0.5;
                }
                stack.push(Particle { ..p });
            }
        }
    }
    (hit, capped)
}

fn run_replicates<F>(replicates: usize, seed: u64, f: F) -> IdentityEstimate
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> (f64, u64) + Sync,
{
    let results: Vec<(f64, u64)> = (0..replicates as u64).into_par_iter().map(|r| f(&mut stream(seed, &[r]))).collect();
    let values: Vec<f64> = results.iter().map(|r| r.0).collect();
    IdentityEstimate { estimate: Estimate::from_samples(&values), capped: results.iter().map(|r| r.1).sum() }
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates >= 2 {
        Ok(())
    } else {
        Err(Error::Config("at least two replicates are needed for a standard error".into()))
    }
}

/// `(1/S(ε)) E^ε[∫₀^∞ Y_t dt]`, which tends to the extinction criterion as `ε → 0`.
pub fn excursion_area_estimate(
    spec: &CoefficientSpec,
    eps: f64,
    cfg: &SplittingConfig,
    replicates: usize,
    seed: u64,
) -> Result<IdentityEstimate> {
    check_cutoff(spec, eps)?;
    check_replicates(replicates)?;
    let q = QuadratureConfig::default();
    let s_eps = ScaleProfile::new(spec, &q)?.scale(eps, &q)?;
    let st = Stepper::new(spec, cfg.dt, cfg.scheme);
    let lv = levels(eps, cfg.split_cap.min(0.5 * spec.upper()));
    let max_steps = (cfg.max_time / cfg.dt).ceil() as usize;
    let mut est = run_replicates(replicates, seed, |rng| area_replicate(&st, eps, &lv, max_steps, rng));
    est.estimate.mean /= s_eps;
    est.estimate.se /= s_eps;
    Ok(est)
}

/// `N · P^{1/N}(sup Y ≥ δ)`, which tends to `Q(sup ≥ δ) = 1/S(δ)` as `N → ∞`.
pub fn q_mass_estimate(
    spec: &CoefficientSpec,
    n: f64,
    delta: f64,
    cfg: &SplittingConfig,
    replicates: usize,
    seed: u64,
) -> Result<IdentityEstimate> {
    check_cutoff(spec, delta)?;
    check_replicates(replicates)?;
    let x0 = 1.0 / n;
    if !(x0 > 0.0 && x0 < delta) {
        return Err(Error::Config(format!("start 1/N = {x0} must lie in (0, δ)")));
    }
    let st = Stepper::new(spec, cfg.dt, cfg.scheme);
    let lv: Vec<f64> = levels(x0, delta).into_iter().filter(|&l| l < delta).collect();
    let max_steps = (cfg.max_time / cfg.dt).ceil() as usize;
    let mut est = run_replicates(replicates, seed, |rng| {
        hit_replicate(&st, x0, delta, &lv, max_steps, cfg.bridge_correction, rng)
    });
    est.estimate.mean *= n;
    est.estimate.se *= n;
    Ok(est)
}
