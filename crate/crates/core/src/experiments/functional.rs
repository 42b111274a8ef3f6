use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coefficients::Structure;
use crate::error::{Error, Result};

/// Test-function classes of the three stochastic orders on total-mass paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FunctionClass {
    /// Nondecreasing (usual stochastic order).
    #[serde(rename = "F+pm")]
    Increasing,
    /// Nondecreasing and directionally convex.
    #[serde(rename = "F++")]
    IncreasingConvex,
    /// Nondecreasing and directionally concave.
    #[serde(rename = "F+-")]
    IncreasingConcave,
}

impl FunctionClass {
    pub fn label(self) -> &'static str {
        match self {
            FunctionClass::Increasing => "F+pm",
            FunctionClass::IncreasingConvex => "F++",
            FunctionClass::IncreasingConcave => "F+-",
        }
    }

    /// Orders under which the system total mass is dominated by the virgin
    /// island total mass, given the declared coefficient structure.
    pub fn applicable(structure: &Structure) -> Vec<FunctionClass> {
        let mut out = Vec::new();
        if structure.mu_concave && structure.sigma2_super() {
            out.push(FunctionClass::IncreasingConcave);
        }
        if structure.mu_concave && structure.sigma2_sub() {
            out.push(FunctionClass::IncreasingConvex);
        }
        if structure.mu_subadditive && structure.sigma2_additive {
            out.push(FunctionClass::Increasing);
        }
        out
    }
}

impl fmt::Display for FunctionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A functional of a path evaluated at finitely many times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctional {
    /// `1 − exp(−Σ λ_j η_{t_j})`.
    ExpDecreasingConcave { lambdas: Vec<f64>, times: Vec<f64> },
    /// `Π η_{t_j}`.
    MixedMonomial { times: Vec<f64> },
    /// `Π_j 1/(1 + exp(−(η_{t_j} − level)/width))`.
    SmoothStep { level: f64, width: f64, times: Vec<f64> },
}

impl TestFunctional {
    pub fn exp(lambda: f64, t: f64) -> Self {
        TestFunctional::ExpDecreasingConcave { lambdas: vec![lambda], times: vec![t] }
    }

    pub fn times(&self) -> &[f64] {
        match self {
            TestFunctional::ExpDecreasingConcave { times, .. }
            | TestFunctional::MixedMonomial { times }
            | TestFunctional::SmoothStep { times, .. } => times,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let times = self.times();
        if times.is_empty() || times.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(Error::Config(format!("{self}: evaluation times must be finite and nonnegative")));
        }
        match self {
            TestFunctional::ExpDecreasingConcave { lambdas, times } => {
                if lambdas.len() != times.len() {
                    return Err(Error::Config(format!("{self}: one λ per evaluation time")));
                }
                if lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
                    return Err(Error::Config(format!("{self}: λ must be finite and nonnegative")));
                }
            }
            TestFunctional::SmoothStep { width, level, .. } => {
                if !(*width > 0.0 && width.is_finite() && level.is_finite()) {
                    return Err(Error::Config(format!("{self}: width must be positive")));
                }
            }
            TestFunctional::MixedMonomial { .. } => {}
        }
        Ok(())
    }

    /// `values[j]` is the path at `times()[j]`.
    pub fn eval(&self, values: &[f64]) -> f64 {
        match self {
            TestFunctional::ExpDecreasingConcave { lambdas, .. } => {
                let s: f64 = lambdas.iter().zip(values).map(|(l, v)| l * v).sum();
                -(-s).exp_m1()
            }
            TestFunctional::MixedMonomial { .. } => values.iter().product(),
            TestFunctional::SmoothStep { level, width, .. } => {
                values.iter().map(|v| 1.0 / (1.0 + (-(v - level) / width).exp())).product()
            }
        }
    }

    /// Whether the functional lies in `class`.
    pub fn belongs_to(&self, class: FunctionClass) -> bool {
        let constant =
            matches!(self, TestFunctional::ExpDecreasingConcave { lambdas, .. } if lambdas.iter().all(|&l| l == 0.0));
        if constant || class == FunctionClass::Increasing {
            return true;
        }
        match self {
            TestFunctional::ExpDecreasingConcave { .. } => class == FunctionClass::IncreasingConcave,
            TestFunctional::MixedMonomial { .. } => class == FunctionClass::IncreasingConvex,
            TestFunctional::SmoothStep { .. } => false,
        }
    }
}

impl fmt::Display for TestFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        match self {
            TestFunctional::ExpDecreasingConcave { lambdas, times } => {
                write!(f, "exp[lambda={}|t={}]", list(lambdas), list(times))
            }
            TestFunctional::MixedMonomial { times } => write!(f, "monomial[t={}]", list(times)),
            TestFunctional::SmoothStep { level, width, times } => {
                write!(f, "step[level={level}|width={width}|t={}]", list(times))
            }
        }
    }
}
