//! Trajectory container and its versioned binary encoding.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "MCFS"
//! version      u32      1
//! particles    u64      rows * cols
//! frames       u64
//! world_scale  f64      1 for target scale, 1/f for a factor-f miniature
//! rows         u32
//! cols         u32
//! meta_len     u32
//! meta         meta_len bytes of UTF-8 JSON (FrameMeta)
//! data         frames * particles * 3 f64, particle-major (x, y, z)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloth::GridClothSpec;
use crate::error::{Error, Result};
use crate::io_util::{read_f64, read_u32, read_u64};
use crate::Vec3;

pub const FRAMES_MAGIC: [u8; 4] = *b"MCFS";
pub const FRAMES_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub label: String,
    pub scene_hash: String,
    pub cloth: Option<GridClothSpec>,
    /// JSON rendering of the solver settings used, if simulated.
    pub solver: Option<String>,
    /// Leading frames produced from bootstrapped (replicated) history.
    pub warmup_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub rows: usize,
    pub cols: usize,
    pub world_scale: f64,
    pub meta: FrameMeta,
    pub frames: Vec<Vec<Vec3>>,
}

impl FrameSequence {
    pub fn new(rows: usize, cols: usize, world_scale: f64, meta: FrameMeta) -> Self {
        Self { rows, cols, world_scale, meta, frames: Vec::new() }
    }

    pub fn particle_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push(&mut self, positions: Vec<Vec3>) -> Result<()> {
        if positions.len() != self.particle_count() {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} particles, sequence expects {}",
                positions.len(),
                self.particle_count()
            )));
        }
        self.frames.push(positions);
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(&FRAMES_MAGIC)?;
        w.write_all(&FRAMES_VERSION.to_le_bytes())?;
        w.write_all(&(self.particle_count() as u64).to_le_bytes())?;
        w.write_all(&(self.frames.len() as u64).to_le_bytes())?;
        w.write_all(&self.world_scale.to_le_bytes())?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        for frame in &self.frames {
            for p in frame {
                for c in p.iter() {
                    w.write_all(&c.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != FRAMES_MAGIC {
            return Err(Error::Format("not a frame sequence (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != FRAMES_VERSION {
            return Err(Error::Version { found: version, expected: FRAMES_VERSION });
        }
        let particles = read_u64(r)? as usize;
        let frame_count = read_u64(r)? as usize;
        let world_scale = read_f64(r)?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        if rows * cols != particles {
            return Err(Error::Format(format!("header says {particles} particles but grid is {rows}x{cols}")));
        }
        let meta_len = read_u32(r)? as usize;
        let mut meta = Vec::new();
        r.take(meta_len as u64).read_to_end(&mut meta)?;
        if meta.len() != meta_len {
            return Err(Error::Format("truncated metadata".into()));
        }
        let meta: FrameMeta = serde_json::from_slice(&meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut seq = FrameSequence::new(rows, cols, world_scale, meta);
        let mut buf = vec![0u8; particles * 24];
        for _ in 0..frame_count {
            r.read_exact(&mut buf)?;
            let frame = buf
                .chunks_exact(24)
                .map(|c| {
                    let f = |k: usize| f64::from_le_bytes(c[k * 8..k * 8 + 8].try_into().unwrap());
                    Vec3::new(f(0), f(1), f(2))
                })
                .collect();
            seq.frames.push(frame);
        }
        Ok(seq)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
