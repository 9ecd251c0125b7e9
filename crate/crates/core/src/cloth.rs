//! Rectangular grid cloth: parameters, spring topology and particle state.
//!
//! Particles are stored row-major, so grid cell `(i, j)` lives at index
//! `i * cols + j`. Every other module relies on that ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Physical and topological description of a grid cloth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridClothSpec {
    pub rows: usize,
    pub cols: usize,
    /// Rest distance between grid-adjacent particles.
    pub spacing: f64,
    pub particle_mass: f64,
    pub k_structural: f64,
    #[serde(default)]
    pub k_shear: f64,
    #[serde(default)]
    pub k_bend: f64,
    /// Velocity damping rate (1/time). The resulting force is `-damping * m * v`.
    #[serde(default)]
    pub damping: f64,
}

impl GridClothSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 3 || self.cols < 3 {
            return Err(Error::InvalidSpec(format!(
                "grid must be at least 3x3, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidSpec(format!("spacing must be > 0, got {}", self.spacing)));
        }
        if !(self.particle_mass > 0.0 && self.particle_mass.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "particle_mass must be > 0, got {}",
                self.particle_mass
            )));
        }
        if !(self.k_structural > 0.0 && self.k_structural.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "k_structural must be > 0, got {}",
                self.k_structural
            )));
        }
        for (name, k) in [("k_shear", self.k_shear), ("k_bend", self.k_bend), ("damping", self.damping)] {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::InvalidSpec(format!("{name} must be >= 0, got {k}")));
            }
        }
        Ok(())
    }

    pub fn particle_count(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpringKind {
    Structural,
    Shear,
    Bend,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
    pub stiffness: f64,
    pub kind: SpringKind,
}

/// Hooke springs plus the diagonal of the mass matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringSystem {
    pub particle_count: usize,
    pub springs: Vec<Spring>,
    pub masses: Vec<f64>,
}

impl SpringSystem {
    /// Mean rest length over all springs, or `None` for a spring-free system.
    pub fn mean_rest_length(&self) -> Option<f64> {
        if self.springs.is_empty() {
            return None;
        }
        let sum: f64 = self.springs.iter().map(|s| s.rest_length).sum();
        Some(sum / self.springs.len() as f64)
    }
}

/// Build the structural / shear / bend spring network of a grid cloth.
///
/// Ordering is fixed: horizontal structural, vertical structural, both
/// diagonals per cell, horizontal bend, vertical bend.
pub fn build_cloth(spec: &GridClothSpec) -> Result<SpringSystem> {
    spec.validate()?;
    let (rows, cols, s) = (spec.rows, spec.cols, spec.spacing);
    let mut springs = Vec::with_capacity(
        rows * (cols - 1) + cols * (rows - 1) + 2 * (rows - 1) * (cols - 1) + rows * (cols - 2) + cols * (rows - 2),
    );
    let mut push = |a: usize, b: usize, rest_length: f64, stiffness: f64, kind: SpringKind| {
        springs.push(Spring { a, b, rest_length, stiffness, kind });
    };

    for i in 0..rows {
        for j in 0..cols - 1 {
            push(spec.index(i, j), spec.index(i, j + 1), s, spec.k_structural, SpringKind::Structural);
        }
    }
    for i in 0..rows - 1 {
        for j in 0..cols {
            push(spec.index(i, j), spec.index(i + 1, j), s, spec.k_structural, SpringKind::Structural);
        }
    }
    let diag = s * std::f64::consts::SQRT_2;
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            push(spec.index(i, j), spec.index(i + 1, j + 1), diag, spec.k_shear, SpringKind::Shear);
            push(spec.index(i, j + 1), spec.index(i + 1, j), diag, spec.k_shear, SpringKind::Shear);
        }
    }
    for i in 0..rows {
        for j in 0..cols - 2 {
            push(spec.index(i, j), spec.index(i, j + 2), 2.0 * s, spec.k_bend, SpringKind::Bend);
        }
    }
    for i in 0..rows - 2 {
        for j in 0..cols {
            push(spec.index(i, j), spec.index(i + 2, j), 2.0 * s, spec.k_bend, SpringKind::Bend);
        }
    }

    Ok(SpringSystem {
        particle_count: spec.particle_count(),
        springs,
        masses: vec![spec.particle_mass; spec.particle_count()],
    })
}

/// Triangles of the grid surface: each cell `(i, j)` with corners
/// `a = (i, j)`, `b = (i, j+1)`, `c = (i+1, j)`, `d = (i+1, j+1)` is split
/// along `a-d` into `(a, b, d)` and `(a, d, c)`.
pub fn grid_triangles(rows: usize, cols: usize) -> Vec<[usize; 3]> {
    let mut tris = Vec::with_capacity(2 * rows.saturating_sub(1) * cols.saturating_sub(1));
    for i in 0..rows.saturating_sub(1) {
        for j in 0..cols.saturating_sub(1) {
            let a = i * cols + j;
            let (b, c, d) = (a + 1, a + cols, a + cols + 1);
            tris.push([a, b, d]);
            tris.push([a, d, c]);
        }
    }
    tris
}

/// Placement of the flat rest grid in world space.
///
/// Particle `(i, j)` sits at `origin + spacing * (i * row_axis + j * col_axis)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub origin: Vec3,
    pub row_axis: Vec3,
    pub col_axis: Vec3,
}

impl Layout {
    /// Grid in the xy-plane, rows along +x and columns along +y.
    pub fn xy(origin: Vec3) -> Self {
        Self { origin, row_axis: Vec3::x(), col_axis: Vec3::y() }
    }

    /// Hanging grid: rows run down (-y), columns along +x.
    pub fn hanging(origin: Vec3) -> Self {
        Self { origin, row_axis: -Vec3::y(), col_axis: Vec3::x() }
    }

    /// Horizontal grid in the xz-plane, rows along +z and columns along +x.
    pub fn horizontal(origin: Vec3) -> Self {
        Self { origin, row_axis: Vec3::z(), col_axis: Vec3::x() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_unit = |v: &Vec3| (v.norm() - 1.0).abs() < 1e-9;
        if !ok_unit(&self.row_axis) || !ok_unit(&self.col_axis) {
            return Err(Error::InvalidScene("layout axes must be unit vectors".into()));
        }
        if self.row_axis.dot(&self.col_axis).abs() > 1e-9 {
            return Err(Error::InvalidScene("layout axes must be orthogonal".into()));
        }
        if !self.origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidScene("layout origin must be finite".into()));
        }
        Ok(())
    }

    pub fn position(&self, spacing: f64, i: usize, j: usize) -> Vec3 {
        self.origin + self.row_axis * (spacing * i as f64) + self.col_axis * (spacing * j as f64)
    }
}

/// Positions and velocities of every particle at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub time_index: usize,
}

impl SimState {
    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(&self.velocities)
            .all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Flat rest configuration with zero velocity at time index 0.
pub fn rest_state(spec: &GridClothSpec, layout: &Layout) -> Result<SimState> {
    spec.validate()?;
    layout.validate()?;
    let positions = (0..spec.rows)
        .flat_map(|i| (0..spec.cols).map(move |j| (i, j)))
        .map(|(i, j)| layout.position(spec.spacing, i, j))
        .collect::<Vec<_>>();
    let n = positions.len();
    Ok(SimState { positions, velocities: vec![Vec3::zeros(); n], time_index: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn spec(rows: usize, cols: usize, spacing: f64) -> GridClothSpec {
        GridClothSpec {
            rows,
            cols,
            spacing,
            particle_mass: 1.0,
            k_structural: 100.0,
            k_shear: 10.0,
            k_bend: 1.0,
            damping: 0.0,
        }
    }

    #[test]
    fn three_by_three_spring_counts() {
        let sys = build_cloth(&spec(3, 3, 1.0)).unwrap();
        assert_eq!(sys.particle_count, 9);
        let count = |k| sys.springs.iter().filter(|s| s.kind == k).count();
        assert_eq!(count(SpringKind::Structural), 12);
        assert_eq!(count(SpringKind::Shear), 8);
        assert_eq!(count(SpringKind::Bend), 6);
        assert_eq!(sys.springs.len(), 26);
    }

    #[test]
    fn rejects_small_or_degenerate_grids() {
        assert!(matches!(build_cloth(&spec(2, 5, 1.0)), Err(Error::InvalidSpec(_))));
        assert!(build_cloth(&spec(3, 3, 0.0)).is_err());
        let mut s = spec(3, 3, 1.0);
        s.particle_mass = -1.0;
        assert!(build_cloth(&s).is_err());
    }

    #[test]
    fn curtain_miniature_particle_count() {
        assert_eq!(build_cloth(&spec(25, 37, 1.0)).unwrap().particle_count, 925);
    }

    #[test]
    fn rest_state_grid_arithmetic() {
        let st = rest_state(&spec(3, 3, 2.0), &Layout::xy(Vec3::zeros())).unwrap();
        assert_eq!(st.positions[0], Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(st.positions[8], Vec3::new(4.0, 4.0, 0.0));
        assert!(st.velocities.iter().all(|v| *v == Vec3::zeros()));
        assert_eq!(st.time_index, 0);
    }

    /// Brute force: every unordered pair of grid cells classified by offset.
    fn enumerate_neighbors(rows: usize, cols: usize) -> (usize, usize, usize) {
        let (mut st, mut sh, mut be) = (0, 0, 0);
        let cells: Vec<(i64, i64)> =
            (0..rows as i64).flat_map(|i| (0..cols as i64).map(move |j| (i, j))).collect();
        for (n, a) in cells.iter().enumerate() {
            for b in &cells[n + 1..] {
                match ((a.0 - b.0).abs(), (a.1 - b.1).abs()) {
                    (0, 1) | (1, 0) => st += 1,
                    (1, 1) => sh += 1,
                    (0, 2) | (2, 0) => be += 1,
                    _ => {}
                }
            }
        }
        (st, sh, be)
    }

    proptest! {
        #[test]
        fn spring_counts_match_enumeration(rows in 3usize..9, cols in 3usize..9) {
            let sys = build_cloth(&spec(rows, cols, 1.0)).unwrap();
            let count = |k| sys.springs.iter().filter(|s| s.kind == k).count();
            let (st, sh, be) = enumerate_neighbors(rows, cols);
            prop_assert_eq!(count(SpringKind::Structural), st);
            prop_assert_eq!(count(SpringKind::Shear), sh);
            prop_assert_eq!(count(SpringKind::Bend), be);
            prop_assert_eq!(st, rows * (cols - 1) + cols * (rows - 1));
            prop_assert_eq!(sh, 2 * (rows - 1) * (cols - 1));
            prop_assert_eq!(be, rows * (cols - 2) + cols * (rows - 2));
            let pairs: HashSet<(usize, usize)> =
                sys.springs.iter().map(|s| (s.a.min(s.b), s.a.max(s.b))).collect();
            prop_assert_eq!(pairs.len(), sys.springs.len());
        }

        #[test]
        fn rest_lengths_match_rest_positions(
            rows in 3usize..8, cols in 3usize..8, spacing in 0.01f64..5.0,
            ox in -3.0f64..3.0, oy in -3.0f64..3.0,
        ) {
            let s = spec(rows, cols, spacing);
            let sys = build_cloth(&s).unwrap();
            let st = rest_state(&s, &Layout::hanging(Vec3::new(ox, oy, 0.5))).unwrap();
            for sp in &sys.springs {
                let d = (st.positions[sp.a] - st.positions[sp.b]).norm();
                prop_assert!((d - sp.rest_length).abs() <= 1e-12 * (1.0 + d));
            }
            prop_assert_eq!(build_cloth(&s).unwrap(), sys);
        }
    }
}
