use thiserror::Error;

/// Errors raised by the model, numerics and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integral diverges: {0}")]
    Divergence(String),

    #[error("quadrature did not converge (partial value {partial:.6e}, error estimate {error:.3e}): {context}")]
    NonConvergence { partial: f64, error: f64, context: String },

    #[error("wrong parameter regime: {0}")]
    Regime(String),

    #[error("root solver failed: {0}")]
    Solver(String),

    #[error("simulation aborted: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// `true` for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Domain(_) | Error::Regime(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
