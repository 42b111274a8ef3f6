//! Adaptive Gauss–Kronrod quadrature with a log-transformed left end and
//! doubling truncation for infinite upper limits.

use serde::Serialize;

use crate::error::{Error, Result};

/// Below this point integrals starting at 0 are evaluated in the variable `ln x`.
pub const LOG_KNEE: f64 = 1e-6;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TailPolicy {
    /// Truncate every infinite upper limit at the given point.
    FixedT(f64),
    /// Integrate doubling chunks until three in a row fall below `abs_tol·10⁻²`.
    AdaptiveDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    pub infinite_tail_cutoff_policy: TailPolicy,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 2000,
            infinite_tail_cutoff_policy: TailPolicy::AdaptiveDecay,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::Config("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::Config("max_subdivisions must be positive".into()));
        }
        if let TailPolicy::FixedT(t) = self.infinite_tail_cutoff_policy {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config("fixed tail cutoff must be finite and positive".into()));
            }
        }
        Ok(())
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_err: f64,
}

impl std::ops::Add for Integral {
    type Output = Integral;
    fn add(self, rhs: Integral) -> Integral {
        Integral { value: self.value + rhs.value, abs_err: self.abs_err + rhs.abs_err }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    resolved: bool,
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    if !res_k.is_finite() {
        return Err(Error::Divergence(format!("non-finite integrand on [{a:.6e}, {b:.6e}]")));
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok((value, err))
}

/// Adaptive G7/K15 integration over a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, q: &QuadratureConfig) -> Result<Integral> {
    if a == b {
        return Ok(Integral { value: 0.0, abs_err: 0.0 });
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("finite limits required, got [{a}, {b}]")));
    }
    let (value, err) = kronrod15(&f, a, b)?;
    let mut segments = vec![Segment { a, b, value, err, resolved: false }];
    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let total_err: f64 = segments.iter().map(|s| s.err).sum();
        let target = q.abs_tol.max(q.rel_tol * total.abs());
        if total_err <= target {
            return Ok(Integral { value: total, abs_err: total_err });
        }
        let worst = segments
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.resolved)
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i);
        let Some(worst) = worst else {
            // Every segment is at floating-point resolution.
            return Ok(Integral { value: total, abs_err: total_err });
        };
        if segments.len() >= q.max_subdivisions {
            return Err(Error::NonConvergence {
                partial: total,
                error: total_err,
                context: format!("{} subdivisions on [{a:.6e}, {b:.6e}]", segments.len()),
            });
        }
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a.min(seg.b) || mid >= seg.a.max(seg.b) || (seg.b - seg.a).abs() < 1e-14 * mid.abs().max(1e-300) {
            segments.push(Segment { resolved: true, ..seg });
            continue;
        }
        let (v1, e1) = kronrod15(&f, seg.a, mid)?;
        let (v2, e2) = kronrod15(&f, mid, seg.b)?;
        segments.push(Segment { a: seg.a, b: mid, value: v1, err: e1, resolved: false });
        segments.push(Segment { a: mid, b: seg.b, value: v2, err: e2, resolved: false });
    }
}

/// `∫_a^∞ f`, truncated according to the tail policy. `h0` is the first chunk width.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, h0: f64, q: &QuadratureConfig) -> Result<Integral> {
    if let TailPolicy::FixedT(t) = q.infinite_tail_cutoff_policy {
        return integrate(&f, a, t.max(a), q);
    }
    doubling_tail(f, a, h0, 1e9, q)
}

fn doubling_tail<F: Fn(f64) -> f64>(f: F, a: f64, h0: f64, max_extent: f64, q: &QuadratureConfig) -> Result<Integral> {
    const MIN_CHUNKS: usize = 6;
    let threshold = q.abs_tol * 1e-2;
    let mut total = Integral { value: 0.0, abs_err: 0.0 };
    let mut lo = a;
    let mut width = h0;
    let mut quiet = 0;
    let mut chunk = 0;
    while lo - a < max_extent {
        let hi = lo + width;
        let part = integrate(&f, lo, hi, q)?;
        total = total + part;
        quiet = if part.value.abs() < threshold { quiet + 1 } else { 0 };
        chunk += 1;
        if quiet >= 3 && chunk >= MIN_CHUNKS {
            return Ok(total);
        }
        lo = hi;
        width *= 2.0;
    }
    Err(Error::Divergence(format!("integrand does not decay by {:.1e} (partial value {:.6e})", lo, total.value)))
}

/// `∫_0^b f` for integrands with an integrable singularity at 0.
///
/// `[0, min(b, knee)]` is mapped to `w = ln(knee / x) ∈ [0, ∞)`; the rest is
/// plain adaptive Gauss–Kronrod.
pub fn integrate_from_zero<F: Fn(f64) -> f64>(f: F, b: f64, q: &QuadratureConfig) -> Result<Integral> {
    if b <= 0.0 {
        return Ok(Integral { value: 0.0, abs_err: 0.0 });
    }
    let knee = b.min(LOG_KNEE);
    // A divergent integrand is still loud when the mapped point is cut off.
    let near = doubling_tail(
        |w: f64| {
            let x = knee * (-w).exp();
            // Coefficients like x^1.5 underflow long before x does.
            if x < 1e-150 {
                0.0
            } else {
                f(x) * x
            }
        },
        0.0,
        1.0,
        690.0,
        q,
    )?;
    if b > knee {
        Ok(near + integrate(&f, knee, b, q)?)
    } else {
        Ok(near)
    }
}

/// `∫_0^upper f` for `upper` finite or infinite, singular end at 0 allowed.
pub fn integrate_zero_to_upper<F: Fn(f64) -> f64>(f: F, upper: f64, q: &QuadratureConfig) -> Result<Integral> {
    if upper.is_finite() {
        return integrate_from_zero(f, upper, q);
    }
    let head = integrate_from_zero(&f, 1.0, q)?;
    Ok(head + integrate_to_infinity(&f, 1.0, 1.0, q)?)
}
