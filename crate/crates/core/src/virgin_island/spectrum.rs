use std::io::Write;

use serde::Serialize;

use super::tree::VirginIslandTree;
use crate::error::{Error, Result};
use crate::sde_sim::SystemPath;

/// Island counts per mass bin at one time; mass 0 is never counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSnapshot {
    pub t: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub enum SpectrumSource<'a> {
    Tree(&'a VirginIslandTree),
    System(&'a SystemPath),
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || !(edges[0] > 0.0) || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("bin edges must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// Counts of `masses` in `[edges[i], edges[i+1])`.
pub fn bin_counts(masses: impl IntoIterator<Item = f64>, edges: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len() - 1];
    for m in masses {
        let i = edges.partition_point(|&e| e <= m);
        if i >= 1 && i < edges.len() {
            counts[i - 1] += 1;
        }
    }
    counts
}

pub fn spectrum(source: SpectrumSource, t: f64, edges: &[f64]) -> Result<SpectrumSnapshot> {
    check_edges(edges)?;
    let counts = match source {
        SpectrumSource::Tree(tree) => bin_counts(tree.masses_at(t)?, edges),
        SpectrumSource::System(sys) => {
            let node = sys.grid.index_of(t)?;
            bin_counts(sys.islands.iter().map(|p| p.values[node]), edges)
        }
    };
    Ok(SpectrumSnapshot { t, edges: edges.to_vec(), counts })
}

impl SpectrumSnapshot {
    /// CSV rows `t,bin_lo,bin_hi,count`.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: bool) -> Result<()> {
        if header {
            writeln!(out, "t,bin_lo,bin_hi,count")?;
        }
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{},{}", self.t, self.edges[i], self.edges[i + 1], c)?;
        }
        Ok(())
    }
}
