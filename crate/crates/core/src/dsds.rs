//! Down-sampling and down-scaling (DSDS) of a target cloth into its miniature.
//!
//! With factor `f`, miniature particle `(i, j)` stands for target particle
//! `(f i, f j)`. The miniature keeps the target's rest length, mass and
//! stiffnesses but lives in a world shrunk by `f`: positions, pin locations
//! and colliders are divided by `f`, and so are the external forces.
//!
//! Training data and inference take different routes through this module.
//! Training inputs come from [`down_sample_frames`] applied to a simulated
//! target trajectory. At inference the miniature is simulated directly from
//! [`down_scale_scene`]. The two agree only approximately because the
//! miniature dynamics are not an exact image of the target dynamics.

use crate::cloth::GridClothSpec;
use crate::error::{Error, Result};
use crate::frames::{FrameMeta, FrameSequence};
use crate::scene::SceneConfig;

/// Index correspondence between a target grid and its factor-`f` miniature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DsdsMapping {
    pub factor: usize,
    pub target_rows: usize,
    pub target_cols: usize,
    pub mini_rows: usize,
    pub mini_cols: usize,
}

impl DsdsMapping {
    pub fn new(target_rows: usize, target_cols: usize, factor: usize) -> Result<Self> {
        if factor < 2 {
            return Err(Error::InvalidFactor(factor));
        }
        for (dimension, value) in [("rows", target_rows), ("cols", target_cols)] {
            if value == 0 || (value - 1) % factor != 0 {
                return Err(Error::Indivisible { factor, dimension, value });
            }
        }
        Ok(Self {
            factor,
            target_rows,
            target_cols,
            mini_rows: (target_rows - 1) / factor + 1,
            mini_cols: (target_cols - 1) / factor + 1,
        })
    }

    pub fn target_count(&self) -> usize {
        self.target_rows * self.target_cols
    }

    pub fn mini_count(&self) -> usize {
        self.mini_rows * self.mini_cols
    }

    /// Target flat index of miniature cell `(i, j)`.
    #[inline]
    pub fn target_of(&self, i: usize, j: usize) -> usize {
        (self.factor * i) * self.target_cols + self.factor * j
    }

    /// Miniature flat index of a target particle, if it survives down-sampling.
    pub fn mini_of(&self, target_index: usize) -> Option<usize> {
        let (ti, tj) = (target_index / self.target_cols, target_index % self.target_cols);
        (ti % self.factor == 0 && tj % self.factor == 0)
            .then(|| (ti / self.factor) * self.mini_cols + tj / self.factor)
    }

    /// Target flat indices of every miniature particle, in miniature order.
    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.mini_rows).flat_map(|i| (0..self.mini_cols).map(move |j| self.target_of(i, j))).collect()
    }
}

/// Miniature cloth spec: fewer particles, identical rest length and material.
pub fn down_sample_spec(target: &GridClothSpec, factor: usize) -> Result<(GridClothSpec, DsdsMapping)> {
    let mapping = DsdsMapping::new(target.rows, target.cols, factor)?;
    let mini = GridClothSpec { rows: mapping.mini_rows, cols: mapping.mini_cols, ..target.clone() };
    Ok((mini, mapping))
}

/// Miniature scene: lengths divided by `f`, gravity and wind speed divided
/// by `f`, everything else (time step, masses, stiffnesses, drag, solver
/// settings) unchanged. Pins keep the target pins that survive down-sampling.
pub fn down_scale_scene(target: &SceneConfig, factor: usize) -> Result<SceneConfig> {
    target.validate()?;
    let (cloth, mapping) = down_sample_spec(&target.cloth, factor)?;
    let f = factor as f64;
    let mut out = target.clone();
    out.name = format!("{}-mini{factor}", target.name);
    out.cloth = cloth;
    out.layout.origin /= f;
    out.pinned = target.pinned.iter().filter_map(|&p| mapping.mini_of(p)).collect();
    out.gravity /= f;
    if let Some(w) = &mut out.wind {
        w.strength /= f;
    }
    for c in &mut out.colliders {
        c.center /= f;
        c.radius /= f;
    }
    out.sweep = None;
    Ok(out)
}

/// Keep the mapped particles of every frame and shrink positions by `f`.
pub fn down_sample_frames(target: &FrameSequence, mapping: &DsdsMapping) -> Result<FrameSequence> {
    if target.rows != mapping.target_rows || target.cols != mapping.target_cols {
        return Err(Error::DimensionMismatch(format!(
            "frames are {}x{}, mapping expects {}x{}",
            target.rows, target.cols, mapping.target_rows, mapping.target_cols
        )));
    }
    let f = mapping.factor as f64;
    let kept = mapping.kept_indices();
    let meta = FrameMeta {
        label: format!("{}-dsds{}", target.meta.label, mapping.factor),
        cloth: target.meta.cloth.as_ref().map(|c| GridClothSpec { rows: mapping.mini_rows, cols: mapping.mini_cols, ..c.clone() }),
        ..target.meta.clone()
    };
    let mut out = FrameSequence::new(mapping.mini_rows, mapping.mini_cols, target.world_scale / f, meta);
    out.frames = target.frames.iter().map(|x| kept.iter().map(|&k| x[k] / f).collect()).collect();
    Ok(out)
}
