//! Scale function, speed measure, extinction criterion and the logistic
//! invariant law `Γ_ρ`.
//!
//! Every single-island quantity is built from
//! `φ(y) = ∫₀^y (−x + μ(x)) / (σ²(x)/2) dx`, with `s = e^{−φ}`.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::Serialize;

use crate::coefficients::CoefficientSpec;
use crate::error::{Error, Result};
use crate::quad::{self, QuadratureConfig};
use crate::rng::stream;

/// Tighter tolerances for integrals nested inside other integrals.
fn inner_config(q: &QuadratureConfig) -> QuadratureConfig {
    QuadratureConfig { abs_tol: (q.abs_tol * 1e-2).max(1e-15), rel_tol: (q.rel_tol * 1e-2).max(1e-13), ..*q }
}

/// `φ` tabulated at anchor points so that each evaluation only integrates
/// over a short final stretch.
#[derive(Debug, Clone)]
pub struct ScaleProfile<'a> {
    spec: &'a CoefficientSpec,
    q: QuadratureConfig,
    anchors: Vec<f64>,
    phi: Vec<f64>,
}

impl<'a> ScaleProfile<'a> {
    pub fn new(spec: &'a CoefficientSpec, q: &QuadratureConfig) -> Result<Self> {
        q.validate()?;
        let q = inner_config(q);
        let upper = spec.upper();
        let first = quad::LOG_KNEE.min(0.25 * upper);
        let mut anchors = vec![first];
        let geometric_end = if upper.is_finite() { 0.25 * upper } else { 1.0 };
        while anchors.last().unwrap() * 2.0 < geometric_end {
            anchors.push(anchors.last().unwrap() * 2.0);
        }
        if upper.is_finite() {
            let step = upper / 64.0;
            let mut x = step * (geometric_end / step).ceil();
            while x < upper * (1.0 - 1.0 / 64.0) + 1e-12 {
                anchors.push(x);
                x += step;
            }
            for k in 7..=30 {
                anchors.push(upper * (1.0 - 0.5f64.powi(k)));
            }
        } else {
            let mut x = 1.0;
            while x <= 256.0 {
                anchors.push(x);
                x += 0.5;
            }
        }
        anchors.dedup_by(|a, b| *a <= *b);

        let g = |x: f64| log_scale_rate(spec, x);
        let mut phi = Vec::with_capacity(anchors.len());
        phi.push(quad::integrate_from_zero(g, first, &q)?.value);
        for w in anchors.windows(2) {
            let prev = *phi.last().unwrap();
            phi.push(prev + quad::integrate(g, w[0], w[1], &q)?.value);
        }
        Ok(Self { spec, q, anchors, phi })
    }

    /// `φ(y)`; `−∞`/`+∞` are possible only at a finite upper boundary.
    pub fn phi(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        let g = |x: f64| log_scale_rate(self.spec, x);
        if y <= self.anchors[0] {
            return Ok(quad::integrate_from_zero(g, y, &self.q)?.value);
        }
        let k = self.anchors.partition_point(|&a| a <= y) - 1;
        Ok(self.phi[k] + quad::integrate(g, self.anchors[k], y, &self.q)?.value)
    }

    /// Scale density `s(z) = e^{−φ(z)}`.
    pub fn density(&self, z: f64) -> Result<f64> {
        Ok((-self.phi(z)?).exp())
    }

    /// Density of the speed measure, `2 / (σ²(y) s(y))`.
    pub fn speed_density(&self, y: f64) -> Result<f64> {
        let s2 = self.spec.sigma2(y);
        Ok(2.0 * (self.phi(y)?).exp() / s2)
    }

    /// `S(y) = ∫₀^y s`.
    pub fn scale(&self, y: f64, q: &QuadratureConfig) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        let f = |z: f64| self.density(z).unwrap_or(f64::NAN);
        Ok(quad::integrate_from_zero(f, y, q)?.value)
    }
}

/// `(−x + μ(x)) / (σ²(x)/2)`.
#[inline]
fn log_scale_rate(spec: &CoefficientSpec, x: f64) -> f64 {
    2.0 * (spec.mu(x) - x) / spec.sigma2(x)
}

fn check_interior(spec: &CoefficientSpec, z: f64, allow_upper: bool) -> Result<()> {
    let upper = spec.upper();
    let ok = z > 0.0 && (z < upper || (allow_upper && z == upper));
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!("{z} outside (0, {upper})")))
    }
}

/// `s(z)`.
pub fn scale_density(spec: &CoefficientSpec, z: f64, q: &QuadratureConfig) -> Result<f64> {
    check_interior(spec, z, false)?;
    let phi = quad::integrate_from_zero(|x| log_scale_rate(spec, x), z, &inner_config(q))?.value;
    Ok((-phi).exp())
}

/// `S(y) = ∫₀^y s(z) dz`; `S(0) = 0`.
pub fn scale_function(spec: &CoefficientSpec, y: f64, q: &QuadratureConfig) -> Result<f64> {
    if y == 0.0 {
        return Ok(0.0);
    }
    check_interior(spec, y, true)?;
    ScaleProfile::new(spec, q)?.scale(y, q)
}

/// `m((a, b)) = ∫_a^b 2 / (σ² s)`. Returns `+∞` when the mass near 0 diverges.
pub fn speed_mass(spec: &CoefficientSpec, a: f64, b: f64, q: &QuadratureConfig) -> Result<f64> {
    if !(0.0 <= a && a <= b && b <= spec.upper()) {
        return Err(Error::Domain(format!("need 0 ≤ a ≤ b ≤ {}, got ({a}, {b})", spec.upper())));
    }
    if a == b {
        return Ok(0.0);
    }
    let profile = ScaleProfile::new(spec, q)?;
    speed_mass_with(&profile, a, b, q)
}

pub fn speed_mass_with(profile: &ScaleProfile, a: f64, b: f64, q: &QuadratureConfig) -> Result<f64> {
    let f = |y: f64| profile.speed_density(y).unwrap_or(f64::NAN);
    let r = if a == 0.0 { quad::integrate_from_zero(f, b, q) } else { quad::integrate(f, a, b, q) };
    match r {
        Ok(v) => Ok(v.value),
        Err(Error::Divergence(_)) if a == 0.0 => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// `Θ = ∫₀^{|I|} y m(dy)`. Global extinction of the virgin island model iff `Θ ≤ 1`.
/// A non-decaying integrand is reported as `+∞`.
pub fn extinction_criterion(spec: &CoefficientSpec, q: &QuadratureConfig) -> Result<f64> {
    let profile = ScaleProfile::new(spec, q)?;
    let f = |y: f64| y * profile.speed_density(y).unwrap_or(f64::NAN);
    match quad::integrate_zero_to_upper(f, spec.upper(), q) {
        Ok(v) => Ok(v.value),
        Err(Error::Divergence(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// `∫_ε^{|I|} y / (σ²(y) s(y)) dy`, an error if it diverges.
pub fn a3_tail_integral(spec: &CoefficientSpec, eps: f64, q: &QuadratureConfig) -> Result<f64> {
    let profile = ScaleProfile::new(spec, q)?;
    let f = |y: f64| 0.5 * y * profile.speed_density(y).unwrap_or(f64::NAN);
    let upper = spec.upper();
    let v = if upper.is_finite() {
        quad::integrate(f, eps, upper, q)?
    } else {
        quad::integrate_to_infinity(f, eps, 1.0, q)?
    };
    Ok(v.value)
}

/// `∫₀^∞ exp(Kγx − γβx²/2 − x) dx`, the criterion for logistic branching.
pub fn logistic_criterion(gamma: f64, k: f64, beta: f64, q: &QuadratureConfig) -> Result<f64> {
    if !(gamma > 0.0 && k > 0.0 && beta > 0.0) {
        return Err(Error::Domain("γ, K, β must be positive".into()));
    }
    q.validate()?;
    let f = |x: f64| (k * gamma * x - 0.5 * gamma * beta * x * x - x).exp();
    let peak = ((k * gamma - 1.0) / (gamma * beta)).max(0.0);
    let width = (1.0 / (gamma * beta).sqrt()).min(1.0);
    Ok(quad::integrate_to_infinity(f, 0.0, peak + width, q)?.value)
}

/// Solution of the logistic `ρ` equation together with the normalised `Γ_ρ`.
#[derive(Debug, Clone, Serialize)]
pub struct RhoSolution {
    pub rho: f64,
    pub normalizer_c: f64,
    pub gamma: f64,
    pub k: f64,
    pub beta: f64,
    /// `R(ρ)` at the returned root.
    pub residual: f64,
    /// Sign-changing bracket the bisection started from.
    pub bracket: (f64, f64),
    #[serde(skip)]
    table: OnceLock<Arc<CdfTable>>,
}

const RHO_QUAD: QuadratureConfig = QuadratureConfig {
    abs_tol: 1e-13,
    rel_tol: 1e-11,
    max_subdivisions: 4000,
    infinite_tail_cutoff_policy: quad::TailPolicy::AdaptiveDecay,
};

/// `h(y) = ((γK − 1)y − γy²/2) / β`.
#[inline]
fn logistic_h(gamma: f64, k: f64, beta: f64, y: f64) -> f64 {
    ((gamma * k - 1.0) * y - 0.5 * gamma * y * y) / beta
}

/// `R(ρ) = ∫₀^∞ y^{ρ/β} (K − y) e^{h(y)} dy`.
pub fn rho_residual(gamma: f64, k: f64, beta: f64, rho: f64) -> Result<f64> {
    let (scaled, log_scale) = scaled_rho_residual(gamma, k, beta, rho)?;
    Ok(scaled * log_scale.exp())
}

/// `R(ρ) e^{−L}` with `L` the maximum of the log weight, and `L`.
fn scaled_rho_residual(gamma: f64, k: f64, beta: f64, rho: f64) -> Result<(f64, f64)> {
    let a = rho / beta;
    let b = gamma * k - 1.0;
    let y_star = (b + (b * b + 4.0 * gamma * a * beta).sqrt()) / (2.0 * gamma);
    let log_w = |y: f64| a * y.ln() + logistic_h(gamma, k, beta, y);
    let l_star = if y_star > 0.0 { log_w(y_star) } else { 0.0 };
    let f = |y: f64| {
        if y == 0.0 {
            return 0.0;
        }
        (k - y) * (log_w(y) - l_star).exp()
    };
    let h0 = y_star.max(k).max(1.0);
    let head = quad::integrate_from_zero(f, h0, &RHO_QUAD)?;
    let tail = quad::integrate_to_infinity(f, h0, h0, &RHO_QUAD)?;
    Ok(((head + tail).value, l_star))
}

/// Finds the root of `R` by bracketing from `ρ₀ = β` and bisecting to `tol`.
pub fn solve_rho(gamma: f64, k: f64, beta: f64, tol: f64) -> Result<RhoSolution> {
    if !(gamma > 0.0 && k > 0.0 && beta > 0.0 && tol > 0.0) {
        return Err(Error::Domain("γ, K, β and tol must be positive".into()));
    }
    let theta = logistic_criterion(gamma, k, beta, &QuadratureConfig::default())?;
    if theta <= 1.0 {
        return Err(Error::Regime(format!("criterion {theta:.6} ≤ 1: the process dies out and ρ does not exist")));
    }
    let r = |rho: f64| scaled_rho_residual(gamma, k, beta, rho).map(|v| v.0);

    let (mut lo, mut hi) = (beta, beta);
    let (mut r_lo, mut r_hi) = (r(beta)?, r(beta)?);
    if r_lo > 0.0 {
        while r_hi > 0.0 {
            lo = hi;
            r_lo = r_hi;
            hi *= 2.0;
            if hi > 1e8 * beta {
                return Err(Error::Solver("no sign change of R found above ρ₀".into()));
            }
            r_hi = r(hi)?;
        }
    } else {
        while r_lo <= 0.0 {
            hi = lo;
            r_hi = r_lo;
            lo *= 0.5;
            if lo < 1e-12 * beta {
                return Err(Error::Solver("no sign change of R found below ρ₀".into()));
            }
            r_lo = r(lo)?;
        }
    }
    let bracket = (lo, hi);
    debug_assert!(r_lo > 0.0 && r_hi <= 0.0);

    // R decreases in ρ: positive at lo, nonpositive at hi.
    let rho_tol = tol.min(1e-10);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        if hi - lo <= rho_tol * mid.max(1.0) {
            break;
        }
        if r(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho = mid;
    let residual = rho_residual(gamma, k, beta, rho)?;
    if residual.abs() >= tol && (hi - lo) > rho_tol * rho.max(1.0) {
        return Err(Error::Solver(format!("residual {residual:.3e} above tolerance {tol:.1e}")));
    }

    let mut sol = RhoSolution { rho, normalizer_c: 1.0, gamma, k, beta, residual, bracket, table: OnceLock::new() };
    let mass = sol.unnormalized_mass(0.0)?;
    sol.normalizer_c = 1.0 / mass;
    Ok(sol)
}

impl RhoSolution {
    fn a(&self) -> f64 {
        self.rho / self.beta
    }

    /// Exponent of `Γ_ρ` beyond the power factor:
    /// `((γK − 1)/β)(x − K) − (γ/2β)(x² − K²)`.
    fn big_h(&self, x: f64) -> f64 {
        logistic_h(self.gamma, self.k, self.beta, x) - logistic_h(self.gamma, self.k, self.beta, self.k)
    }

    /// `Γ_ρ` written in `u = x^a`, where it has the smooth density
    /// `C/(aβK^a) e^{H(u^{1/a})}`.
    fn u_density(&self, u: f64, laplace: f64) -> f64 {
        let a = self.a();
        let x = u.powf(1.0 / a);
        let pref = self.normalizer_c / (a * self.beta * self.k.powf(a));
        pref * (self.big_h(x) - laplace * x).exp()
    }

    /// `∫ e^{−λx} Γ_ρ(dx)` evaluated with `C_ρ = 1`.
    fn unnormalized_mass(&self, lambda: f64) -> Result<f64> {
        let a = self.a();
        let pref = 1.0 / (a * self.beta * self.k.powf(a));
        let f = |u: f64| pref * (self.big_h(u.powf(1.0 / a)) - lambda * u.powf(1.0 / a)).exp();
        let mut h0 = self.mode_u().max(1e-3 * self.k.powf(a)) + self.k.powf(a);
        if lambda > 0.0 {
            h0 = h0.min(lambda.recip().powf(a));
        }
        Ok(quad::integrate_to_infinity(f, 0.0, h0, &RHO_QUAD)?.value)
    }

    /// Location of the maximum of the `u`-space density.
    fn mode_u(&self) -> f64 {
        let x = ((self.gamma * self.k - 1.0) / self.gamma).max(0.0);
        x.powf(self.a())
    }

    /// `Γ_ρ(dx)/dx = C_ρ/(βx) exp(∫_K^x ((ρ − z) + γz(K − z))/(βz) dz)`.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("Γ_ρ density needs x > 0, got {x}")));
        }
        let a = self.a();
        Ok(self.normalizer_c / (self.beta * x) * (a * (x / self.k).ln() + self.big_h(x)).exp())
    }

    /// `Γ_ρ((0, x])`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        let u = x.powf(self.a());
        let v = quad::integrate(|v| self.u_density(v, 0.0), 0.0, u, &RHO_QUAD)?.value;
        Ok(v.clamp(0.0, 1.0))
    }

    /// `P^y(V_∞ = 0) = ∫ e^{−(γ/β) y x} Γ_ρ(dx)`.
    pub fn extinction_probability(&self, y: f64, q: &QuadratureConfig) -> Result<f64> {
        if !(y >= 0.0) {
            return Err(Error::Domain(format!("initial mass must be nonnegative, got {y}")));
        }
        if y == 0.0 {
            return Ok(1.0);
        }
        q.validate()?;
        let lambda = self.gamma / self.beta * y;
        let v = self.normalizer_c * self.unnormalized_mass(lambda)?;
        Ok(v.clamp(0.0, 1.0))
    }

    fn table(&self) -> &CdfTable {
        self.table.get_or_init(|| Arc::new(CdfTable::build(self)))
    }

    /// Draws one value from `Γ_ρ` by inverting a cached CDF table.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p: f64 = rng.random();
        self.table().invert(p).powf(1.0 / self.a())
    }
}

/// Cumulative `Γ_ρ` mass on a uniform grid in `u = x^a`.
#[derive(Debug)]
struct CdfTable {
    u: Vec<f64>,
    cum: Vec<f64>,
}

impl CdfTable {
    const CELLS: usize = 8192;

    fn build(sol: &RhoSolution) -> Self {
        let dens = |u: f64| sol.u_density(u, 0.0);
        // Extend until the density is negligible beyond the mode.
        let mode = sol.mode_u();
        let peak = dens(mode).max(dens(0.0));
        let mut u_max = (mode + sol.k.powf(sol.a())).max(1e-3);
        while dens(u_max) > 1e-17 * peak {
            u_max *= 1.5;
        }
        let step = u_max / Self::CELLS as f64;
        let u: Vec<f64> = (0..=Self::CELLS).map(|i| i as f64 * step).collect();
        let mut cum = Vec::with_capacity(u.len());
        cum.push(0.0);
        for w in u.windows(2) {
            let part = quad::integrate(dens, w[0], w[1], &RHO_QUAD).map(|r| r.value).unwrap_or(0.0);
            cum.push(cum.last().unwrap() + part);
        }
        let total = *cum.last().unwrap();
        for c in &mut cum {
            *c /= total;
        }
        Self { u, cum }
    }

    fn invert(&self, p: f64) -> f64 {
        let i = self.cum.partition_point(|&c| c < p).clamp(1, self.cum.len() - 1);
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        let frac = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.5 };
        self.u[i - 1] + frac * (self.u[i] - self.u[i - 1])
    }
}

pub fn gamma_rho_pdf(sol: &RhoSolution, x: f64) -> Result<f64> {
    sol.pdf(x)
}

/// One draw from `Γ_ρ` on its own random stream.
pub fn gamma_rho_sample(sol: &RhoSolution, seed: u64) -> f64 {
    sol.sample(&mut stream(seed, &[0x6a3a]))
}

pub fn extinction_probability(y: f64, sol: &RhoSolution, q: &QuadratureConfig) -> Result<f64> {
    sol.extinction_probability(y, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{DiffusionFamily, DomainInterval, DriftFamily, Structure};
    use statrs::function::gamma::ln_gamma;

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn feller(c: f64, beta: f64) -> CoefficientSpec {
        CoefficientSpec::feller(c, beta).unwrap()
    }

    /// `E1(x) = −γ_E − ln x − Σ (−x)^n / (n·n!)`.
    fn e1(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for n in 1..200 {
            term *= -x / n as f64;
            sum += term / n as f64;
        }
        -0.577_215_664_901_532_9 - x.ln() - sum
    }

    #[test]
    fn scale_density_closed_forms() {
        let s = feller(0.0, 1.0);
        for z in [1e-8, 0.01, 0.5, 1.0, 3.0] {
            let v = scale_density(&s, z, &q()).unwrap();
            assert!((v / z.exp() - 1.0).abs() < 1e-10, "z={z}: {v}");
        }
        let (c, beta) = (0.4, 0.7);
        let s = feller(c, beta);
        for z in [0.1, 1.0, 2.5] {
            let want = ((1.0 - c) * z / beta).exp();
            assert!((scale_density(&s, z, &q()).unwrap() / want - 1.0).abs() < 1e-10);
        }
        assert!((scale_density(&s, 1e-12, &q()).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scale_function_closed_forms() {
        let s = feller(0.0, 1.0);
        assert_eq!(scale_function(&s, 0.0, &q()).unwrap(), 0.0);
        let v = scale_function(&s, 1.0, &q()).unwrap();
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-9);

        let (c, beta) = (0.3, 2.0);
        let s = feller(c, beta);
        let profile = ScaleProfile::new(&s, &q()).unwrap();
        let mut prev = 0.0;
        for y in [1e-7, 0.01, 0.3, 1.0, 4.0] {
            let want = beta / (1.0 - c) * (((1.0 - c) * y / beta).exp() - 1.0);
            let got = profile.scale(y, &q()).unwrap();
            assert!((got / want - 1.0).abs() < 1e-8, "y={y}: {got} vs {want}");
            assert!(got > prev);
            prev = got;
        }
        // S(y)/y → 1.
        assert!((profile.scale(1e-9, &q()).unwrap() / 1e-9 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn speed_mass_matches_exponential_integral() {
        // Critical Feller, β = 1: 2/(σ² s) = e^{−y}/y, so m((a, b)) = E1(a) − E1(b).
        let s = feller(0.0, 1.0);
        for (a, b) in [(0.1, 1.0), (0.5, 3.0), (1.0, 2.0)] {
            let got = speed_mass(&s, a, b, &q()).unwrap();
            let want = e1(a) - e1(b);
            assert!((got - want).abs() < 1e-8, "({a},{b}): {got} vs {want}");
        }
        assert_eq!(speed_mass(&s, 0.7, 0.7, &q()).unwrap(), 0.0);
        assert_eq!(speed_mass(&s, 0.0, 1.0, &q()).unwrap(), f64::INFINITY);
        let whole = speed_mass(&s, 0.2, 2.0, &q()).unwrap();
        let split = speed_mass(&s, 0.2, 0.9, &q()).unwrap() + speed_mass(&s, 0.9, 2.0, &q()).unwrap();
        assert!((whole - split).abs() < 1e-9);
        assert!(speed_mass(&s, 0.5, 0.2, &q()).is_err());
    }

    #[test]
    fn criterion_closed_forms() {
        let theta = extinction_criterion(&feller(0.0, 1.0), &q()).unwrap();
        assert!((theta - 1.0).abs() < 1e-8);
        let theta = extinction_criterion(&feller(0.0, 2.5), &q()).unwrap();
        assert!((theta - 1.0).abs() < 1e-8);
        let theta = extinction_criterion(&feller(0.5, 1.0), &q()).unwrap();
        assert!((theta - 2.0).abs() < 1e-8);
        assert_eq!(extinction_criterion(&feller(1.5, 1.0), &q()).unwrap(), f64::INFINITY);

        let sm = CoefficientSpec::selection_mutation(1.0, 1.0).unwrap();
        let theta = extinction_criterion(&sm, &q()).unwrap();
        assert!((theta - (std::f64::consts::E - 2.0)).abs() < 1e-8, "{theta}");
        // ∫₀¹ (1−y)² e^{2y} dy = (e² − 5)/4.
        let sm = CoefficientSpec::selection_mutation(2.0, 2.0).unwrap();
        let theta = extinction_criterion(&sm, &q()).unwrap();
        let want = ((2.0f64).exp() - 5.0) / 4.0;
        assert!((theta - want).abs() < 1e-8, "{theta} vs {want}");
    }

    #[test]
    fn logistic_criterion_anchors() {
        let v = logistic_criterion(1.0, 1.0, 1.0, &q()).unwrap();
        assert!((v - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-9);
        let v = logistic_criterion(1e-9, 1.0, 1.0, &q()).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
        for (g, k, b) in [(1.0, 1.0, 1.0), (0.5, 3.0, 2.0), (2.0, 0.3, 0.5)] {
            let spec = CoefficientSpec::logistic(g, k, b).unwrap();
            let lhs = logistic_criterion(g, k, b, &q()).unwrap();
            let rhs = extinction_criterion(&spec, &q()).unwrap();
            assert!((lhs - rhs).abs() < 1e-7, "({g},{k},{b}): {lhs} vs {rhs}");
        }
    }

    #[test]
    fn power_diffusion_criterion_is_finite() {
        let spec = CoefficientSpec::new(
            DomainInterval::half_line(),
            DriftFamily::Power { c1: 1.0, kappa1: 1.0, c2: 1.0, kappa2: 2.0 },
            DiffusionFamily::Power { c3: 2.0, kappa3: 1.5 },
            Structure::default(),
        )
        .unwrap();
        let theta = extinction_criterion(&spec, &q()).unwrap();
        assert!(theta.is_finite() && theta > 0.0);
    }

    /// For γ = K = β = 1 the ρ equation reduces to
    /// `Γ((ρ+1)/2) / Γ((ρ+2)/2) = √2`, solved here by plain bisection.
    fn rho_oracle() -> f64 {
        let f = |r: f64| ln_gamma((r + 1.0) / 2.0) - ln_gamma((r + 2.0) / 2.0) - 0.5 * 2f64.ln();
        let (mut lo, mut hi) = (1e-6, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn rho_matches_gamma_function_oracle() {
        let sol = solve_rho(1.0, 1.0, 1.0, 1e-10).unwrap();
        let oracle = rho_oracle();
        assert!((sol.rho - oracle).abs() < 1e-8, "{} vs {oracle}", sol.rho);
        assert!((sol.rho - 0.399_286_445).abs() < 1e-8, "regression anchor moved: {}", sol.rho);
        assert!(sol.residual.abs() < 1e-8);
        let (lo, hi) = sol.bracket;
        assert!(rho_residual(1.0, 1.0, 1.0, lo).unwrap() > 0.0);
        assert!(rho_residual(1.0, 1.0, 1.0, hi).unwrap() < 0.0);
    }

    #[test]
    fn rho_sign_scan_agrees_with_bisection() {
        let (g, k, b) = (0.8, 2.0, 0.6);
        let sol = solve_rho(g, k, b, 1e-10).unwrap();
        let grid: Vec<f64> = (0..=70).map(|i| 10f64.powf(-4.0 + i as f64 * 0.1)).collect();
        let change = grid
            .windows(2)
            .find(|w| rho_residual(g, k, b, w[0]).unwrap() > 0.0 && rho_residual(g, k, b, w[1]).unwrap() <= 0.0)
            .unwrap();
        assert!(change[0] <= sol.rho && sol.rho <= change[1]);
    }

    #[test]
    fn subcritical_rho_is_a_regime_error() {
        assert!(matches!(solve_rho(0.5, 1.0, 4.0, 1e-10), Err(Error::Regime(_))));
    }

    #[test]
    fn gamma_rho_normalizes_and_has_mean_rho() {
        for (g, k, b) in [(1.0, 1.0, 1.0), (1.0, 3.0, 0.5), (2.0, 2.0, 2.0)] {
            let sol = solve_rho(g, k, b, 1e-10).unwrap();
            let mass = quad::integrate_zero_to_upper(|x| sol.pdf(x).unwrap(), f64::INFINITY, &q()).unwrap();
            assert!((mass.value - 1.0).abs() < 1e-7, "mass {}", mass.value);
            let mean = quad::integrate_zero_to_upper(|x| x * sol.pdf(x).unwrap(), f64::INFINITY, &q()).unwrap();
            assert!((mean.value - sol.rho).abs() < 1e-7, "mean {} vs ρ {}", mean.value, sol.rho);
            let at_k = sol.pdf(k).unwrap();
            assert!((at_k - sol.normalizer_c / (b * k)).abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_rho_closed_exponent_matches_quadrature() {
        let sol = solve_rho(1.3, 1.7, 0.8, 1e-10).unwrap();
        let (g, k, b, rho) = (sol.gamma, sol.k, sol.beta, sol.rho);
        let mut rng = stream(99, &[1]);
        for _ in 0..10 {
            let x: f64 = 0.05 + 4.0 * rng.random::<f64>();
            let inner = quad::integrate(|z| ((rho - z) + g * z * (k - z)) / (b * z), k, x, &q()).unwrap();
            let want = sol.normalizer_c / (b * x) * inner.value.exp();
            assert!((sol.pdf(x).unwrap() / want - 1.0).abs() < 1e-9);
        }
        assert!(sol.pdf(0.0).is_err());
    }

    #[test]
    fn sampler_matches_cdf() {
        let sol = solve_rho(1.0, 1.0, 1.0, 1e-10).unwrap();
        let mut rng = stream(7, &[2]);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sol.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let mut sup = 0.0f64;
        for (i, &x) in xs.iter().enumerate().step_by(97) {
            let f = sol.cdf(x).unwrap();
            sup = sup.max((f - i as f64 / n as f64).abs()).max((f - (i + 1) as f64 / n as f64).abs());
        }
        assert!(sup < 0.01, "sup distance {sup}");
        assert_eq!(gamma_rho_sample(&sol, 3), gamma_rho_sample(&sol, 3));
    }

    #[test]
    fn survival_curve_is_monotone() {
        let sol = solve_rho(1.0, 1.0, 1.0, 1e-10).unwrap();
        assert_eq!(sol.extinction_probability(0.0, &q()).unwrap(), 1.0);
        let mut prev = 1.0;
        for y in [0.1, 0.5, 1.0, 2.0, 4.0, 16.0] {
            let p = sol.extinction_probability(y, &q()).unwrap();
            assert!(p < prev && p > 0.0, "y={y}: {p}");
            prev = p;
        }
        // For large y only the x^{a-1} singularity at 0 matters:
        // P ≈ C/(βK^a) e^{H(0)} Γ(a) λ^{-a} with λ = (γ/β)y.
        let a = sol.rho / sol.beta;
        for y in [1e4, 1e8] {
            let asym = sol.normalizer_c / (sol.beta * sol.k.powf(a))
                * (sol.big_h(0.0) + ln_gamma(a)).exp()
                * (sol.gamma / sol.beta * y).powf(-a);
            let p = sol.extinction_probability(y, &q()).unwrap();
            assert!((p / asym - 1.0).abs() < 1e-3, "y={y}: {p} vs {asym}");
        }
        // Direct Laplace transform in x as an independent route.
        let direct =
            quad::integrate_zero_to_upper(|x| (-x).exp() * sol.pdf(x).unwrap(), f64::INFINITY, &q()).unwrap().value;
        assert!((sol.extinction_probability(1.0, &q()).unwrap() - direct).abs() < 1e-8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn speed_mass_is_additive(c in -1.0f64..0.9, beta in 0.2f64..3.0, a in 0.01f64..1.0, d1 in 0.01f64..2.0, d2 in 0.01f64..2.0) {
                let spec = feller(c, beta);
                let (b, e) = (a + d1, a + d1 + d2);
                let whole = speed_mass(&spec, a, e, &q()).unwrap();
                let parts = speed_mass(&spec, a, b, &q()).unwrap() + speed_mass(&spec, b, e, &q()).unwrap();
                prop_assert!((whole - parts).abs() <= 1e-8 * (1.0 + whole));
            }

            #[test]
            fn scale_is_increasing(g in 0.2f64..3.0, k in 0.2f64..3.0, beta in 0.2f64..3.0, y in 0.01f64..3.0, dy in 0.001f64..1.0) {
                let spec = CoefficientSpec::logistic(g, k, beta).unwrap();
                let p = ScaleProfile::new(&spec, &q()).unwrap();
                prop_assert!(p.density(y).unwrap() > 0.0);
                prop_assert!(p.scale(y + dy, &q()).unwrap() > p.scale(y, &q()).unwrap());
            }

            #[test]
            fn logistic_routes_agree(g in 0.2f64..3.0, k in 0.2f64..3.0, beta in 0.2f64..3.0) {
                let spec = CoefficientSpec::logistic(g, k, beta).unwrap();
                let a = logistic_criterion(g, k, beta, &q()).unwrap();
                let b = extinction_criterion(&spec, &q()).unwrap();
                prop_assert!((a - b).abs() < 1e-6 * a.max(1.0), "{} vs {}", a, b);
            }
        }
    }
}
