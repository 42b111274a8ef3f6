//! Seeded, range-preserving time discretisations of the single-island SDE,
//! island systems with arbitrary or uniform migration, and their
//! migration-level decompositions.

mod export;
mod grid;
mod scheme;
mod systems;

pub use export::{write_path_csv, write_system_csv, PATH_HEADER};
pub use grid::{interpolate, trapezoid, Path, TimeGrid};
pub use scheme::{Scheme, Stepper};
pub use systems::{
    simulate_level_system, simulate_loop_free, simulate_single, simulate_system, simulate_uniform_system,
    simulate_with_immigration, ImmigrationProfile, MigrationMatrix, Simulator, SystemPath, Topology, NO_LEVEL,
};
