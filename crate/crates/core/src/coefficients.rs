//! Drift `μ` and infinitesimal variance `σ²` of a single island, with the
//! numeric checks of the standing assumptions on them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analytics;
use crate::config::ConfigMap;
use crate::error::{Error, Result};
use crate::quad::{self, QuadratureConfig};
use crate::rng::stream;

/// The state interval `[0, upper]`, or `[0, ∞)` when `upper` is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainInterval {
    upper: f64,
}

impl DomainInterval {
    pub fn new(upper: f64) -> Result<Self> {
        if !(upper > 0.0) {
            return Err(Error::Config(format!("domain upper bound must be positive, got {upper}")));
        }
        Ok(Self { upper })
    }

    pub fn half_line() -> Self {
        Self { upper: f64::INFINITY }
    }

    pub fn unit() -> Self {
        Self { upper: 1.0 }
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.upper.is_finite()
    }

    pub fn contains(&self, x: f64) -> bool {
        (0.0..=self.upper).contains(&x)
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.max(0.0).min(self.upper)
    }
}

/// Piecewise polynomial on `[0, ∞)`. Piece `k` covers `[breaks[k], breaks[k+1])`
/// and is evaluated in the global variable `x` (not shifted).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewisePolynomial {
    breaks: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

impl PiecewisePolynomial {
    /// `breaks[0]` must be 0 and strictly increasing; one coefficient vector
    /// (constant term first) per break.
    pub fn new(breaks: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if breaks.is_empty() || breaks[0] != 0.0 {
            return Err(Error::Config("piecewise polynomial must start at 0".into()));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("breakpoints must be strictly increasing".into()));
        }
        if breaks.len() != coeffs.len() {
            return Err(Error::Config(format!("{} breakpoints but {} coefficient rows", breaks.len(), coeffs.len())));
        }
        if coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        Ok(Self { breaks, coeffs })
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0], vec![coeffs])
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let piece = self.breaks.partition_point(|&b| b <= x).saturating_sub(1);
        self.coeffs[piece].iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DriftFamily {
    /// `γ x (K − x)`
    Logistic {
        gamma: f64,
        k: f64,
    },
    /// `c x`
    Linear {
        c: f64,
    },
    /// `c1 x^κ1 − c2 x^κ2`
    Power {
        c1: f64,
        kappa1: f64,
        c2: f64,
        kappa2: f64,
    },
    /// `s x (1 − x) − u x` on `[0, 1]`
    SelectionMutation {
        s: f64,
        u: f64,
    },
    Custom(PiecewisePolynomial),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DiffusionFamily {
    /// `2 β x`
    Linear {
        beta: f64,
    },
    /// `c3 x^κ3`
    Power {
        c3: f64,
        kappa3: f64,
    },
    /// `2 x (1 − x)` on `[0, 1]`
    WrightFisher,
    Custom(PiecewisePolynomial),
}

/// Structural properties the user claims for `μ` and `σ²`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Structure {
    pub mu_concave: bool,
    pub mu_subadditive: bool,
    pub sigma2_superadditive: bool,
    pub sigma2_subadditive: bool,
    pub sigma2_additive: bool,
}

impl Structure {
    pub fn sigma2_super(&self) -> bool {
        self.sigma2_superadditive || self.sigma2_additive
    }

    pub fn sigma2_sub(&self) -> bool {
        self.sigma2_subadditive || self.sigma2_additive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientSpec {
    pub domain: DomainInterval,
    pub drift: DriftFamily,
    pub diffusion: DiffusionFamily,
    pub structure: Structure,
}

impl CoefficientSpec {
    pub fn new(
        domain: DomainInterval,
        drift: DriftFamily,
        diffusion: DiffusionFamily,
        structure: Structure,
    ) -> Result<Self> {
        check_params(&domain, &drift, &diffusion)?;
        Ok(Self { domain, drift, diffusion, structure })
    }

    /// Logistic branching `μ = γx(K−x)`, `σ² = 2βx` on `[0, ∞)`.
    pub fn logistic(gamma: f64, k: f64, beta: f64) -> Result<Self> {
        Self::new(
            DomainInterval::half_line(),
            DriftFamily::Logistic { gamma, k },
            DiffusionFamily::Linear { beta },
            Structure {
                mu_concave: true,
                mu_subadditive: true,
                sigma2_additive: true,
                sigma2_superadditive: true,
                sigma2_subadditive: true,
            },
        )
    }

    /// Feller branching `μ = cx`, `σ² = 2βx`; `c = 0` is the critical case.
    pub fn feller(c: f64, beta: f64) -> Result<Self> {
        Self::new(
            DomainInterval::half_line(),
            DriftFamily::Linear { c },
            DiffusionFamily::Linear { beta },
            Structure {
                mu_concave: true,
                mu_subadditive: true,
                sigma2_additive: true,
                sigma2_superadditive: true,
                sigma2_subadditive: true,
            },
        )
    }

    /// Stepping-stone selection/mutation on `[0, 1]` with Wright–Fisher noise.
    pub fn selection_mutation(s: f64, u: f64) -> Result<Self> {
        Self::new(
            DomainInterval::unit(),
            DriftFamily::SelectionMutation { s, u },
            DiffusionFamily::WrightFisher,
            Structure { mu_concave: true, sigma2_subadditive: true, ..Structure::default() },
        )
    }

    pub fn upper(&self) -> f64 {
        self.domain.upper()
    }

    /// `μ(x)`, checked against the domain.
    pub fn eval_drift(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.mu(x))
    }

    /// `σ²(x)`, checked against the domain.
    pub fn eval_diffusion_sq(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.sigma2(x))
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain(format!("{x} outside [0, {}]", self.domain.upper())))
        }
    }

    /// Unchecked `μ(x)`; callers keep `x` in the domain.
    #[inline]
    pub fn mu(&self, x: f64) -> f64 {
        match &self.drift {
            DriftFamily::Logistic { gamma, k } => gamma * x * (k - x),
            DriftFamily::Linear { c } => c * x,
            DriftFamily::Power { c1, kappa1, c2, kappa2 } => c1 * x.powf(*kappa1) - c2 * x.powf(*kappa2),
            DriftFamily::SelectionMutation { s, u } => s * x * (1.0 - x) - u * x,
            DriftFamily::Custom(p) => p.eval(x),
        }
    }

    /// Unchecked `σ²(x)`, floored at zero.
    #[inline]
    pub fn sigma2(&self, x: f64) -> f64 {
        let v = match &self.diffusion {
            DiffusionFamily::Linear { beta } => 2.0 * beta * x,
            DiffusionFamily::Power { c3, kappa3 } => c3 * x.powf(*kappa3),
            DiffusionFamily::WrightFisher => 2.0 * x * (1.0 - x),
            DiffusionFamily::Custom(p) => p.eval(x),
        };
        v.max(0.0)
    }

    pub fn is_linear_diffusion(&self) -> bool {
        matches!(self.diffusion, DiffusionFamily::Linear { .. })
    }

    /// `(γ, K, β)` when the spec is logistic drift with linear diffusion.
    pub fn logistic_params(&self) -> Option<(f64, f64, f64)> {
        match (&self.drift, &self.diffusion) {
            (DriftFamily::Logistic { gamma, k }, DiffusionFamily::Linear { beta }) if !self.domain.is_bounded() => {
                Some((*gamma, *k, *beta))
            }
            _ => None,
        }
    }

    /// Natural length scale used for probe grids on unbounded domains.
    pub fn probe_extent(&self) -> f64 {
        if self.domain.is_bounded() {
            return self.domain.upper();
        }
        match &self.drift {
            DriftFamily::Logistic { k, .. } => 10.0 * k,
            DriftFamily::Custom(p) => 10.0 * p.breaks().last().copied().unwrap_or(1.0).max(1.0),
            _ => 10.0,
        }
    }

    /// Parses the `drift.*`, `diffusion.*`, `domain.upper` and `structure.*` keys.
    pub fn from_config(cfg: &ConfigMap) -> Result<Self> {
        let upper = cfg.f64_or("domain.upper", f64::INFINITY)?;
        let domain = DomainInterval::new(upper)?;
        let drift_family = cfg.str("drift.family")?.ok_or_else(|| Error::Config("missing `drift.family`".into()))?;
        let p = |name: &str| cfg.require_f64(&format!("drift.params.{name}"));
        let drift = match normalize(drift_family).as_str() {
            "logistic" => DriftFamily::Logistic { gamma: p("gamma")?, k: p("k").or_else(|_| p("K"))? },
            "linear" | "lineardrift" => DriftFamily::Linear { c: cfg.f64_or("drift.params.c", 0.0)? },
            "zero" | "none" => DriftFamily::Linear { c: 0.0 },
            "power" | "powerdrift" => {
                DriftFamily::Power { c1: p("c1")?, kappa1: p("kappa1")?, c2: p("c2")?, kappa2: p("kappa2")? }
            }
            "selectionmutation" => DriftFamily::SelectionMutation { s: p("s")?, u: p("u")? },
            "custom" => DriftFamily::Custom(custom_from_config(cfg, "drift")?),
            other => return Err(Error::Config(format!("unknown drift family `{other}`"))),
        };
        let diffusion_family =
            cfg.str("diffusion.family")?.ok_or_else(|| Error::Config("missing `diffusion.family`".into()))?;
        let q = |name: &str| cfg.require_f64(&format!("diffusion.params.{name}"));
        let diffusion = match normalize(diffusion_family).as_str() {
            "linear" | "lineardiffusion" | "feller" => DiffusionFamily::Linear { beta: q("beta")? },
            "power" | "powerdiffusion" => DiffusionFamily::Power { c3: q("c3")?, kappa3: q("kappa3")? },
            "wrightfisher" => DiffusionFamily::WrightFisher,
            "custom" => DiffusionFamily::Custom(custom_from_config(cfg, "diffusion")?),
            other => return Err(Error::Config(format!("unknown diffusion family `{other}`"))),
        };
        let structure = Structure {
            mu_concave: cfg.bool_or("structure.mu_concave", false)?,
            mu_subadditive: cfg.bool_or("structure.mu_subadditive", false)?,
            sigma2_superadditive: cfg.bool_or("structure.sigma2_superadditive", false)?,
            sigma2_subadditive: cfg.bool_or("structure.sigma2_subadditive", false)?,
            sigma2_additive: cfg.bool_or("structure.sigma2_additive", false)?,
        };
        Self::new(domain, drift, diffusion, structure)
    }

    /// Probes Assumptions A1/A3 and the declared structure numerically.
    pub fn validate_assumptions(&self, probe_count: usize) -> ValidationReport {
        validate(self, probe_count)
    }
}

fn normalize(name: &str) -> String {
    name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
}

fn custom_from_config(cfg: &ConfigMap, prefix: &str) -> Result<PiecewisePolynomial> {
    let breaks = cfg.f64_list(&format!("{prefix}.params.breaks"))?.unwrap_or_else(|| vec![0.0]);
    let coeffs = cfg
        .matrix(&format!("{prefix}.params.coeffs"))?
        .ok_or_else(|| Error::Config(format!("missing `{prefix}.params.coeffs`")))?;
    PiecewisePolynomial::new(breaks, coeffs)
}

fn check_params(domain: &DomainInterval, drift: &DriftFamily, diffusion: &DiffusionFamily) -> Result<()> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
        }
    };
    match drift {
        DriftFamily::Logistic { gamma, k } => {
            positive("γ", *gamma)?;
            positive("K", *k)?;
        }
        DriftFamily::Linear { c } => {
            if !c.is_finite() {
                return Err(Error::Config("drift slope must be finite".into()));
            }
        }
        DriftFamily::Power { c1, kappa1, c2, kappa2 } => {
            positive("c1", *c1)?;
            positive("c2", *c2)?;
            if !(*kappa1 >= 1.0 && kappa2 > kappa1) {
                return Err(Error::Config(format!("power drift needs 1 ≤ κ1 < κ2, got κ1={kappa1}, κ2={kappa2}")));
            }
        }
        DriftFamily::SelectionMutation { s, u } => {
            positive("s", *s)?;
            positive("u", *u)?;
            if domain.upper() != 1.0 {
                return Err(Error::Config("selection/mutation drift lives on [0, 1]".into()));
            }
        }
        DriftFamily::Custom(_) => {}
    }
    match diffusion {
        DiffusionFamily::Linear { beta } => positive("β", *beta)?,
        DiffusionFamily::Power { c3, kappa3 } => {
            positive("c3", *c3)?;
            positive("κ3", *kappa3)?;
        }
        DiffusionFamily::WrightFisher => {
            if domain.upper() != 1.0 {
                return Err(Error::Config("Wright–Fisher diffusion lives on [0, 1]".into()));
            }
        }
        DiffusionFamily::Custom(_) => {}
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Upward Lipschitz estimate `L_μ` on the probe grid.
    pub lipschitz_mu: f64,
    /// Growth constant `L_σ` estimate on the probe grid.
    pub growth_sigma: f64,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self, name: &str) -> bool {
        self.check(name).is_some_and(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub const CHECK_ZERO: &str = "zero_conditions";
pub const CHECK_UPPER: &str = "upper_boundary";
pub const CHECK_POSITIVE: &str = "sigma2_positive_interior";
pub const CHECK_LIPSCHITZ: &str = "upward_lipschitz";
pub const CHECK_GROWTH: &str = "sigma2_growth";
pub const CHECK_A3_ZERO: &str = "a3_integrable_at_zero";
pub const CHECK_A3_TAIL: &str = "a3_integrable_tail";
pub const CHECK_MU_CONCAVE: &str = "mu_concave";
pub const CHECK_MU_SUBADDITIVE: &str = "mu_subadditive";
pub const CHECK_S2_SUPER: &str = "sigma2_superadditive";
pub const CHECK_S2_SUB: &str = "sigma2_subadditive";
pub const CHECK_S2_ADDITIVE: &str = "sigma2_additive";

const STRUCTURE_SEED: u64 = 0x5eed_c0ef;

/// Log-spaced probes on `(0, extent]` with `0` and `extent` included.
fn probe_grid(extent: f64, count: usize) -> Vec<f64> {
    let lo = (extent * 1e-8).ln();
    let hi = extent.ln();
    let mut xs: Vec<f64> = (0..count).map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp()).collect();
    xs.insert(0, 0.0);
    *xs.last_mut().unwrap() = extent;
    xs
}

fn upward_lipschitz(spec: &CoefficientSpec, xs: &[f64]) -> f64 {
    xs.windows(2).map(|w| (spec.mu(w[1]) - spec.mu(w[0])) / (w[1] - w[0])).fold(f64::NEG_INFINITY, f64::max).max(0.0)
}

fn growth_constant(spec: &CoefficientSpec, xs: &[f64]) -> f64 {
    xs.iter().filter(|&&y| y > 0.0).map(|&y| spec.sigma2(y) / (y + y * y)).fold(0.0, f64::max)
}

fn validate(spec: &CoefficientSpec, probe_count: usize) -> ValidationReport {
    let probe_count = probe_count.max(100);
    let upper = spec.upper();
    let bounded = spec.domain.is_bounded();
    let extent = spec.probe_extent();
    let xs = probe_grid(extent, probe_count);
    let tol = 1e-12;
    let mut checks = Vec::new();

    let mu0 = spec.mu(0.0);
    let s0 = spec.sigma2(0.0);
    checks.push(Check {
        name: CHECK_ZERO,
        passed: mu0.abs() <= tol && s0.abs() <= tol,
        detail: format!("μ(0) = {mu0:.3e}, σ²(0) = {s0:.3e}"),
    });

    if bounded {
        let mu_u = spec.mu(upper);
        let s_u = spec.sigma2(upper);
        checks.push(Check {
            name: CHECK_UPPER,
            passed: mu_u <= tol && s_u.abs() <= tol,
            detail: format!("μ({upper}) = {mu_u:.3e}, σ²({upper}) = {s_u:.3e}"),
        });
    }

    let interior_min =
        xs.iter().filter(|&&x| x > 0.0 && x < upper).map(|&x| (x, spec.sigma2(x))).min_by(|a, b| a.1.total_cmp(&b.1));
    checks.push(Check {
        name: CHECK_POSITIVE,
        passed: interior_min.is_none_or(|(_, v)| v > 0.0),
        detail: match interior_min {
            Some((x, v)) => format!("min σ² on probes = {v:.3e} at x = {x:.3e}"),
            None => "no interior probes".into(),
        },
    });

    // Global constants must not keep growing when the probe range widens.
    let lip = upward_lipschitz(spec, &xs);
    let growth = growth_constant(spec, &xs);
    let (lip_wide, growth_wide) = if bounded {
        (lip, growth)
    } else {
        let wide = probe_grid(extent * 10.0, probe_count);
        (upward_lipschitz(spec, &wide), growth_constant(spec, &wide))
    };
    let stable = |narrow: f64, wide: f64| wide.is_finite() && wide <= 2.0 * narrow + 1e-9;
    checks.push(Check {
        name: CHECK_LIPSCHITZ,
        passed: stable(lip, lip_wide),
        detail: format!("L_μ ≈ {lip:.4e} on [0, {extent:.3e}], {lip_wide:.4e} on 10× range"),
    });
    checks.push(Check {
        name: CHECK_GROWTH,
        passed: stable(growth, growth_wide),
        detail: format!("L_σ ≈ {growth:.4e} on [0, {extent:.3e}], {growth_wide:.4e} on 10× range"),
    });

    let q = QuadratureConfig::default().with_abs_tol(1e-9);
    let eps = if bounded { 0.5 * upper } else { 1.0 };
    let near = quad::integrate_from_zero(
        |y| {
            let s2 = spec.sigma2(y);
            if s2 > 0.0 {
                y / s2
            } else {
                f64::INFINITY
            }
        },
        eps,
        &q,
    );
    checks.push(Check {
        name: CHECK_A3_ZERO,
        passed: near.is_ok(),
        detail: match &near {
            Ok(v) => format!("∫₀^{eps} y/σ²(y) dy = {:.6e}", v.value),
            Err(e) => e.to_string(),
        },
    });
    let tail = if near.is_ok() {
        analytics::a3_tail_integral(spec, eps, &q)
    } else {
        Err(Error::Divergence("skipped: scale function undefined".into()))
    };
    checks.push(Check {
        name: CHECK_A3_TAIL,
        passed: tail.is_ok(),
        detail: match &tail {
            Ok(v) => format!("∫_{eps}^|I| y/(σ² s) dy = {v:.6e}"),
            Err(e) => e.to_string(),
        },
    });

    structural_checks(spec, extent, &mut checks);

    ValidationReport { checks, lipschitz_mu: lip, growth_sigma: growth }
}

fn structural_checks(spec: &CoefficientSpec, extent: f64, checks: &mut Vec<Check>) {
    let st = spec.structure;
    let mut rng: ChaCha8Rng = stream(STRUCTURE_SEED, &[0]);
    // Deterministic corner probes first, then random pairs with x + y in range.
    let mut pairs: Vec<(f64, f64)> = vec![(0.0, extent), (0.0, 0.2 * extent), (0.1 * extent, 0.3 * extent)];
    for _ in 0..2000 {
        let x = rng.random::<f64>() * extent;
        let y = rng.random::<f64>() * (extent - x);
        pairs.push((x, y));
    }
    let scale = |v: f64| 1e-9 * (1.0 + v.abs());

    let first_violation = |pred: &dyn Fn(f64, f64) -> Option<f64>| -> Option<(f64, f64, f64)> {
        pairs.iter().find_map(|&(x, y)| pred(x, y).map(|gap| (x, y, gap)))
    };
    let mut report = |flag: bool, name: &'static str, v: Option<(f64, f64, f64)>| {
        if flag {
            checks.push(Check {
                name,
                passed: v.is_none(),
                detail: match v {
                    None => "no violation on spot-check pairs".into(),
                    Some((x, y, gap)) => format!("violated at x = {x:.4e}, y = {y:.4e} (gap {gap:.3e})"),
                },
            });
        }
    };

    let concave = first_violation(&|x, y| {
        let mid = spec.mu(0.5 * (x + y));
        let chord = 0.5 * (spec.mu(x) + spec.mu(y));
        (mid < chord - scale(chord)).then_some(chord - mid)
    });
    report(st.mu_concave, CHECK_MU_CONCAVE, concave);

    let subadd = first_violation(&|x, y| {
        let lhs = spec.mu(x + y);
        let rhs = spec.mu(x) + spec.mu(y);
        (lhs > rhs + scale(rhs)).then_some(lhs - rhs)
    });
    report(st.mu_subadditive, CHECK_MU_SUBADDITIVE, subadd);

    let s_super = first_violation(&|x, y| {
        let lhs = spec.sigma2(x + y);
        let rhs = spec.sigma2(x) + spec.sigma2(y);
        (lhs < rhs - scale(rhs)).then_some(rhs - lhs)
    });
    let s_sub = first_violation(&|x, y| {
        let lhs = spec.sigma2(x + y);
        let rhs = spec.sigma2(x) + spec.sigma2(y);
        (lhs > rhs + scale(rhs)).then_some(lhs - rhs)
    });
    report(st.sigma2_superadditive, CHECK_S2_SUPER, s_super);
    report(st.sigma2_subadditive, CHECK_S2_SUB, s_sub);
    report(st.sigma2_additive, CHECK_S2_ADDITIVE, s_super.or(s_sub));
}
