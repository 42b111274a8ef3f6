//! Experiment harness: comparison of island systems with the virgin island
//! model, convergence along an island-count ladder, Monte Carlo identity
//! checks, duality and analysis reports. Every run writes CSV tables plus a
//! JSON summary embedding the resolved config, its hash and the master seed.

mod analysis;
mod comparison;
mod convergence;
mod duality;
mod functional;
mod identities;
mod report;
mod settings;

pub use analysis::{run_analysis, AnalysisReport, Verdict, SURVIVAL_GRID};
pub use comparison::{run_comparison, ComparisonReport, ComparisonRow};
pub use convergence::{run_convergence, ConvergenceReport, ConvergenceRow, Tent};
pub use duality::{duality_tolerance, run_duality, DualityReport, DualityRun, DUALITY_BIAS_BUDGET};
pub use functional::{FunctionClass, TestFunctional};
pub use identities::{
    run_identity_suite, IdentityCheck, IdentityReport, SnapshotCheck, IDENTITY_TOLERANCE, SNAPSHOT_LEVEL,
};
pub use report::{config_hash, write_csv_file, Summary};
pub use settings::{DualitySettings, ExperimentConfig, IdentitySettings, MIN_REPLICATES};
