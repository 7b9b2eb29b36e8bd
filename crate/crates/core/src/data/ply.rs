use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes an ASCII PLY point set with optional per-vertex float columns.
pub fn write_ply<W: Write>(mut w: W, points: &[[f32; 3]], columns: &[(&str, &[f32])]) -> Result<()> {
    if let Some((name, col)) = columns.iter().find(|(_, c)| c.len() != points.len()) {
        return Err(Error::InvalidArgument(format!("column {name} has {} values for {} points", col.len(), points.len())));
    }
    let io = |e| Error::io("<ply>", e);
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len()).map_err(io)?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}").map_err(io)?;
    }
    for (name, _) in columns {
        writeln!(w, "property float {name}").map_err(io)?;
    }
    writeln!(w, "end_header").map_err(io)?;
    for (i, p) in points.iter().enumerate() {
        write!(w, "{} {} {}", p[0], p[1], p[2]).map_err(io)?;
        for (_, col) in columns {
            write!(w, " {}", col[i]).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

pub fn save_ply(path: impl AsRef<Path>, points: &[[f32; 3]], columns: &[(&str, &[f32])]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(&mut w, points, columns)?;
    w.flush().map_err(|e| Error::io(path, e))
}
