//! Wavefront OBJ export of grid frames.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::cloth::grid_triangles;
use crate::error::Result;
use crate::frames::FrameSequence;
use crate::Vec3;

pub fn write_obj(w: &mut impl Write, positions: &[Vec3], triangles: &[[usize; 3]]) -> std::io::Result<()> {
    for p in positions {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    for t in triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// One `frame_NNNNN.obj` per frame; returns the written paths.
pub fn export_obj_sequence(frames: &FrameSequence, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let tris = grid_triangles(frames.rows, frames.cols);
    let width = frames.len().saturating_sub(1).to_string().len().max(5);
    let mut paths = Vec::with_capacity(frames.len());
    for (k, f) in frames.frames.iter().enumerate() {
        let path = dir.join(format!("frame_{k:0width$}.obj"));
        let mut w = BufWriter::new(File::create(&path)?);
        write_obj(&mut w, f, &tris)?;
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::FrameMeta;

    #[test]
    fn grid_export() {
        let mut seq = FrameSequence::new(3, 3, 1.0, FrameMeta::default());
        for t in 0..4 {
            seq.push((0..9).map(|k| Vec3::new(k as f64, t as f64, 0.0)).collect()).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let paths = export_obj_sequence(&seq, dir.path().join("out")).unwrap();
        assert_eq!(paths.len(), 4);
        assert!(paths[0].ends_with("frame_00000.obj"));
        let text = fs::read_to_string(&paths[3]).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 9);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 8);
        assert!(text.starts_with("v 0 3 0\n"));
    }
}
