//! Small Monte Carlo summaries and the two goodness-of-fit tests the
//! experiments use.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let mut acc = Accumulator::default();
        xs.iter().for_each(|&x| acc.push(x));
        acc.estimate()
    }

    /// Standard error of `self − other` for independent estimates.
    pub fn combined_se(&self, other: &Estimate) -> f64 {
        self.se.hypot(other.se)
    }
}

/// Welford accumulator; merging keeps the result independent of chunking
/// only up to rounding, so callers merge in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn estimate(&self) -> Estimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        Estimate { mean: self.mean, se: (var / self.n.max(1) as f64).sqrt(), n: self.n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    TestResult { statistic: d, p_value: kolmogorov_q(lambda) }
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson χ² of observed counts against expected counts.
pub fn chi_square(observed: &[f64], expected: &[f64], fitted_params: usize) -> TestResult {
    let stat: f64 = observed.iter().zip(expected).filter(|(_, &e)| e > 0.0).map(|(&o, &e)| (o - e) * (o - e) / e).sum();
    let dof = observed.len().saturating_sub(1 + fitted_params).max(1) as f64;
    let p_value = ChiSquared::new(dof).map(|d| 1.0 - d.cdf(stat)).unwrap_or(f64::NAN);
    TestResult { statistic: stat, p_value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn accumulator_matches_two_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let e = Estimate::from_samples(&xs);
        let mean = xs.iter().sum::<f64>() / 1000.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((e.mean - mean).abs() < 1e-12);
        assert!((e.se - (var / 1000.0).sqrt()).abs() < 1e-12);

        let mut a = Accumulator::default();
        let mut b = Accumulator::default();
        xs[..300].iter().for_each(|&x| a.push(x));
        xs[300..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.estimate().se - e.se).abs() < 1e-12);
    }

    #[test]
    fn ks_accepts_same_law_and_rejects_shift() {
        let mut rng = stream(5, &[]);
        let a: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        let c: Vec<f64> = (0..5000).map(|_| rng.random::<f64>() + 0.1).collect();
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
    }

    #[test]
    fn chi_square_p_value() {
        let r = chi_square(&[10.0, 10.0], &[10.0, 10.0], 0);
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }
}
