//! Scene description: cloth, pins, external forces, colliders and timing.
//!
//! Scenes are authored as TOML. Units are whatever the author picks as long
//! as they are consistent; the bundled scenes use metres, kilograms and
//! seconds (stiffness in N/m, gravity in m/s^2, wind strength in m/s).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloth::{rest_state, GridClothSpec, Layout, SimState};
use crate::error::{Error, Result};
use crate::Vec3;

/// Uniform wind acting on cloth triangles through a linear drag law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wind {
    /// Unit direction of the wind velocity.
    pub direction: Vec3,
    /// Wind speed (length/time).
    pub strength: f64,
    /// Drag coefficient (mass / (length^2 * time)).
    pub drag: f64,
}

impl Wind {
    pub fn velocity(&self) -> Vec3 {
        self.direction * self.strength
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    /// Fraction of tangential velocity removed on contact, in [0, 1].
    #[serde(default)]
    pub friction: f64,
}

/// Parameter lists swept to produce varied training trajectories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    #[serde(default)]
    pub particle_mass: Vec<f64>,
    #[serde(default)]
    pub k_structural: Vec<f64>,
    #[serde(default)]
    pub time_step: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub name: String,
    pub cloth: GridClothSpec,
    pub layout: Layout,
    /// Sorted, deduplicated particle indices held at their rest positions.
    pub pinned: Vec<usize>,
    pub gravity: Vec3,
    pub wind: Option<Wind>,
    pub colliders: Vec<Sphere>,
    pub time_step: f64,
    pub solver_iterations: usize,
    pub frame_count: usize,
    pub sweep: Option<Sweep>,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.cloth.validate()?;
        self.layout.validate()?;
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return Err(Error::InvalidScene(format!("time_step must be > 0, got {}", self.time_step)));
        }
        if self.solver_iterations < 1 {
            return Err(Error::InvalidScene("solver_iterations must be >= 1".into()));
        }
        let n = self.cloth.particle_count();
        if let Some(&bad) = self.pinned.iter().find(|&&p| p >= n) {
            return Err(Error::InvalidScene(format!("pinned index {bad} >= particle count {n}")));
        }
        if !self.gravity.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidScene("gravity must be finite".into()));
        }
        if let Some(w) = &self.wind {
            if (w.direction.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidScene("wind direction must be a unit vector".into()));
            }
            if !w.strength.is_finite() || !(w.drag >= 0.0 && w.drag.is_finite()) {
                return Err(Error::InvalidScene("wind strength must be finite and drag >= 0".into()));
            }
        }
        let rest = rest_state(&self.cloth, &self.layout)?;
        for (k, s) in self.colliders.iter().enumerate() {
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                return Err(Error::InvalidScene(format!("collider {k}: radius must be > 0")));
            }
            if !(0.0..=1.0).contains(&s.friction) {
                return Err(Error::InvalidScene(format!("collider {k}: friction must be in [0, 1]")));
            }
            if let Some(&p) = self.pinned.iter().find(|&&p| (rest.positions[p] - s.center).norm() < s.radius) {
                return Err(Error::InvalidScene(format!("pinned particle {p} starts inside collider {k}")));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<SimState> {
        rest_state(&self.cloth, &self.layout)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scene serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Expand the sweep block into concrete scenes (cartesian product).
    /// Without a sweep the scene itself is the only variant.
    pub fn variants(&self) -> Vec<SceneConfig> {
        let sweep = match &self.sweep {
            Some(s) => s.clone(),
            None => return vec![self.clone()],
        };
        let or_base = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
        let masses = or_base(&sweep.particle_mass, self.cloth.particle_mass);
        let stiffs = or_base(&sweep.k_structural, self.cloth.k_structural);
        let steps = or_base(&sweep.time_step, self.time_step);
        let mut out = Vec::new();
        for &m in &masses {
            for &k in &stiffs {
                for &h in &steps {
                    let mut s = self.clone();
                    s.sweep = None;
                    s.cloth.particle_mass = m;
                    s.cloth.k_structural = k;
                    s.time_step = h;
                    s.name = format!("{}-{}", self.name, out.len());
                    out.push(s);
                }
            }
        }
        out
    }

    /// Similarity-scaled copy: every world length (layout origin, spacing and
    /// hence rest lengths, collider centres and radii) and every external force
    /// is multiplied by `s`, while masses, stiffnesses and the time step stay.
    /// Wind speed scales with `s`; drag scales with `1/s^2` so that the
    /// area-weighted wind force scales with `s` too.
    pub fn scaled_uniformly(&self, s: f64) -> SceneConfig {
        let mut out = self.clone();
        out.cloth.spacing *= s;
        out.layout.origin *= s;
        out.gravity *= s;
        if let Some(w) = &mut out.wind {
            w.strength *= s;
            w.drag /= s * s;
        }
        for c in &mut out.colliders {
            c.center *= s;
            c.radius *= s;
        }
        out
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SceneFile = toml::from_str(text).map_err(|e| Error::SceneParse(e.to_string()))?;
        let scene = file.into_scene()?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::SceneParse(msg) => Error::SceneParse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PinSpec {
    #[serde(default)]
    rows: Vec<usize>,
    #[serde(default)]
    cols: Vec<usize>,
    #[serde(default)]
    indices: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    name: String,
    time_step: f64,
    #[serde(default = "default_iterations")]
    solver_iterations: usize,
    frame_count: usize,
    #[serde(default)]
    gravity: Option<Vec3>,
    cloth: GridClothSpec,
    layout: Layout,
    #[serde(default)]
    pins: PinSpec,
    #[serde(default)]
    wind: Option<Wind>,
    #[serde(default)]
    colliders: Vec<Sphere>,
    #[serde(default)]
    sweep: Option<Sweep>,
}

fn default_iterations() -> usize {
    50
}

impl SceneFile {
    fn into_scene(self) -> Result<SceneConfig> {
        let (rows, cols) = (self.cloth.rows, self.cloth.cols);
        let mut pinned = self.pins.indices.clone();
        for &i in &self.pins.rows {
            if i >= rows {
                return Err(Error::InvalidScene(format!("pinned row {i} >= rows {rows}")));
            }
            pinned.extend((0..cols).map(|j| i * cols + j));
        }
        for &j in &self.pins.cols {
            if j >= cols {
                return Err(Error::InvalidScene(format!("pinned column {j} >= cols {cols}")));
            }
            pinned.extend((0..rows).map(|i| i * cols + j));
        }
        pinned.sort_unstable();
        pinned.dedup();
        let wind = self.wind.map(|mut w| {
            let n = w.direction.norm();
            if n > 0.0 {
                w.direction /= n;
            }
            w
        });
        Ok(SceneConfig {
            name: self.name,
            cloth: self.cloth,
            layout: self.layout,
            pinned,
            gravity: self.gravity.unwrap_or_else(|| Vec3::new(0.0, -9.8, 0.0)),
            wind,
            colliders: self.colliders,
            time_step: self.time_step,
            solver_iterations: self.solver_iterations,
            frame_count: self.frame_count,
            sweep: self.sweep,
        })
    }
}

/// Built-in scene archetypes. Grid sizes are the target resolutions whose
/// factor-2 miniatures have 925, 425 and 651 particles.
pub mod presets {
    use super::*;

    fn cloth(rows: usize, cols: usize, spacing: f64) -> GridClothSpec {
        GridClothSpec {
            rows,
            cols,
            spacing,
            particle_mass: 0.003,
            k_structural: 800.0,
            k_shear: 150.0,
            k_bend: 5.0,
            damping: 0.0,
        }
    }

    /// Curtain hanging from its top row, pushed by a light side wind.
    pub fn curtain() -> SceneConfig {
        let cloth = cloth(49, 73, 0.02);
        SceneConfig {
            name: "curtain".into(),
            pinned: (0..cloth.cols).collect(),
            layout: Layout::hanging(Vec3::new(0.0, 1.0, 0.0)),
            cloth,
            gravity: Vec3::new(0.0, -9.8, 0.0),
            wind: Some(Wind { direction: Vec3::z(), strength: 2.0, drag: 0.5 }),
            colliders: vec![],
            time_step: 0.04,
            solver_iterations: 50,
            frame_count: 200,
            sweep: None,
        }
    }

    /// Flag attached along its first column, blown sideways.
    pub fn flag() -> SceneConfig {
        let cloth = cloth(33, 49, 0.02);
        let pinned = (0..cloth.rows).map(|i| i * cloth.cols).collect();
        SceneConfig {
            name: "flag".into(),
            pinned,
            layout: Layout::hanging(Vec3::new(0.0, 1.0, 0.0)),
            cloth,
            gravity: Vec3::new(0.0, -9.8, 0.0),
            wind: Some(Wind { direction: Vec3::new(0.8, 0.0, 0.6), strength: 6.0, drag: 0.2 }),
            colliders: vec![],
            time_step: 0.04,
            solver_iterations: 50,
            frame_count: 200,
            sweep: None,
        }
    }

    /// Horizontal sheet dropped onto a sphere.
    pub fn collision() -> SceneConfig {
        let cloth = cloth(41, 61, 0.02);
        SceneConfig {
            name: "collision".into(),
            pinned: vec![],
            layout: Layout::horizontal(Vec3::new(-0.6, 0.5, -0.4)),
            cloth,
            gravity: Vec3::new(0.0, -9.8, 0.0),
            wind: None,
            colliders: vec![Sphere { center: Vec3::new(0.0, 0.2, 0.0), radius: 0.25, friction: 0.3 }],
            time_step: 0.02,
            solver_iterations: 50,
            frame_count: 200,
            sweep: None,
        }
    }
}
