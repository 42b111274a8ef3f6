//! The virgin island model: excursions sampled from the excursion measure
//! `Q` above a height cutoff `δ`, trees of islands colonised at rate
//! `χ_{t−s}/S(δ)`, their mass spectra, and splitting estimators for the
//! identities linking `Q` to the scale function and speed measure.

mod estimators;
mod excursion;
mod spectrum;
mod tree;

pub use estimators::{excursion_area_estimate, q_mass_estimate, IdentityEstimate, SplittingConfig};
pub use excursion::{excursion_mass_above, sample_excursion, sample_excursion_with, Excursion, START_FRACTION};
pub use spectrum::{bin_counts, spectrum, SpectrumSnapshot, SpectrumSource};
pub use tree::{build_tree, ExcursionMode, Island, TreeBuilder, TreeConfig, VirginIslandTree};
