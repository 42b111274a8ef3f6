use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::coefficients::CoefficientSpec;

/// One-step discretisations of `dY = b(Y)dt + √σ²(Y) dB` on `[0, upper]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum Scheme {
    /// Euler–Maruyama with the result clamped to the domain.
    TruncatedEuler,
    /// Euler–Maruyama away from the boundaries. Within three standard
    /// deviations of a boundary the Gaussian increment is replaced by the
    /// two-point law with the same mean and variance whose lower atom sits
    /// on the boundary, so clamping never shifts the mean.
    #[default]
    BoundaryMatched,
}

impl Scheme {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "truncatedeuler" | "euler" | "truncated" => Some(Self::TruncatedEuler),
            "boundarymatched" | "matched" => Some(Self::BoundaryMatched),
            _ => None,
        }
    }
}

/// Stepper bound to one coefficient spec and step size.
#[derive(Debug, Clone, Copy)]
pub struct Stepper<'a> {
    pub spec: &'a CoefficientSpec,
    pub dt: f64,
    pub upper: f64,
    pub scheme: Scheme,
}

impl<'a> Stepper<'a> {
    pub fn new(spec: &'a CoefficientSpec, dt: f64, scheme: Scheme) -> Self {
        Self { spec, dt, upper: spec.upper(), scheme }
    }

    /// Conditional mean and variance of the next state for
    /// `dY = (inflow − Y + μ(Y))dt + √σ²(Y) dB`.
    #[inline]
    pub fn moments(&self, x: f64, inflow: f64) -> (f64, f64) {
        let drift = inflow - x + self.spec.mu(x);
        (x + drift * self.dt, self.spec.sigma2(x) * self.dt)
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, x: f64, inflow: f64, rng: &mut R) -> f64 {
        let (m, v) = self.moments(x, inflow);
        self.advance(m, v, rng)
    }

    /// Draws the next state given its target mean `m` and variance `v`.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(&self, m: f64, v: f64, rng: &mut R) -> f64 {
        let upper = self.upper;
        if v <= 0.0 {
            return m.clamp(0.0, upper);
        }
        match self.scheme {
            Scheme::TruncatedEuler => {
                let z: f64 = rng.sample(StandardNormal);
                (m + v.sqrt() * z).clamp(0.0, upper)
            }
            Scheme::BoundaryMatched => {
                if m <= 0.0 {
                    return 0.0;
                }
                if m >= upper {
                    return upper;
                }
                let sd = v.sqrt();
                let below = upper - m;
                if m >= 3.0 * sd && below >= 3.0 * sd {
                    let z: f64 = rng.sample(StandardNormal);
                    return (m + sd * z).clamp(0.0, upper);
                }
                if m <= below {
                    // {0, m + v/m} with P(high) = m² / (m² + v)
                    let p_hi = m * m / (m * m + v);
                    if rng.random::<f64>() < p_hi {
                        (m + v / m).min(upper)
                    } else {
                        0.0
                    }
                } else {
                    let p_lo = below * below / (below * below + v);
                    if rng.random::<f64>() < p_lo {
                        (upper - below - v / below).max(0.0)
                    } else {
                        upper
                    }
                }
            }
        }
    }

    /// `true` when [`Stepper::advance`] would take a Gaussian step.
    #[inline]
    pub fn is_gaussian(&self, m: f64, v: f64) -> bool {
        match self.scheme {
            Scheme::TruncatedEuler => v > 0.0,
            Scheme::BoundaryMatched => {
                let sd = v.sqrt();
                v > 0.0 && m >= 3.0 * sd && self.upper - m >= 3.0 * sd
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stats::Accumulator;

    #[test]
    fn boundary_step_matches_first_two_moments() {
        let spec = CoefficientSpec::feller(0.0, 1.0).unwrap();
        let st = Stepper::new(&spec, 1e-3, Scheme::BoundaryMatched);
        let mut rng = stream(1, &[]);
        for x in [1e-4, 1e-3, 5e-3] {
            let (m, v) = st.moments(x, 0.0);
            let (mut a1, mut a2) = (Accumulator::default(), Accumulator::default());
            for _ in 0..200_000 {
                let y = st.advance(m, v, &mut rng);
                a1.push(y);
                a2.push((y - m) * (y - m));
            }
            let (e1, e2) = (a1.estimate(), a2.estimate());
            assert!((e1.mean - m).abs() < 4.0 * e1.se, "x={x}");
            assert!((e2.mean - v).abs() < 4.0 * e2.se, "x={x}");
        }
    }

    #[test]
    fn zero_is_absorbing_without_inflow() {
        let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
        let mut rng = stream(2, &[]);
        for scheme in [Scheme::TruncatedEuler, Scheme::BoundaryMatched] {
            let st = Stepper::new(&spec, 1e-3, scheme);
            assert_eq!(st.step(0.0, 0.0, &mut rng), 0.0);
            assert!(st.step(0.0, 0.5, &mut rng) > 0.0);
        }
    }

    #[test]
    fn bounded_domain_is_respected() {
        let spec = CoefficientSpec::selection_mutation(1.0, 1.0).unwrap();
        let mut rng = stream(3, &[]);
        for scheme in [Scheme::TruncatedEuler, Scheme::BoundaryMatched] {
            let st = Stepper::new(&spec, 0.05, scheme);
            for i in 0..10_000 {
                let x = (i as f64 + 0.5) / 10_000.0;
                let y = st.step(x, 0.3, &mut rng);
                assert!((0.0..=1.0).contains(&y));
            }
        }
    }

    #[test]
    fn scheme_names() {
        assert_eq!(Scheme::parse("truncated_euler"), Some(Scheme::TruncatedEuler));
        assert_eq!(Scheme::parse("BoundaryMatched"), Some(Scheme::BoundaryMatched));
        assert_eq!(Scheme::parse("milstein"), None);
    }
}
