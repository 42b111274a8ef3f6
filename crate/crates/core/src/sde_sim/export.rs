use std::io::Write;

use super::grid::Path;
use super::systems::SystemPath;
use crate::error::Result;

pub const PATH_HEADER: &str = "t,island,level,value";

/// Writes one path as island 0, level −1.
pub fn write_path_csv<W: Write>(path: &Path, out: &mut W) -> Result<()> {
    writeln!(out, "{PATH_HEADER}")?;
    for (i, v) in path.values.iter().enumerate() {
        writeln!(out, "{},0,-1,{}", path.grid.time(i), v)?;
    }
    Ok(())
}

/// Island totals as level −1, followed by per-level rows when present.
pub fn write_system_csv<W: Write>(sys: &SystemPath, out: &mut W) -> Result<()> {
    writeln!(out, "{PATH_HEADER}")?;
    for node in 0..sys.grid.nodes() {
        let t = sys.grid.time(node);
        for (i, p) in sys.islands.iter().enumerate() {
            writeln!(out, "{t},{i},-1,{}", p.values[node])?;
        }
        if let Some(levels) = &sys.levels {
            for (i, paths) in levels.iter().enumerate() {
                for (k, p) in paths.iter().enumerate() {
                    writeln!(out, "{t},{i},{k},{}", p.values[node])?;
                }
            }
        }
    }
    Ok(())
}
