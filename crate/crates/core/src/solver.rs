//! Implicit Euler integration of the mass-spring cloth.
//!
//! Each step solves
//!
//! ```text
//! x_{t+1} - (x_t + h v_t) = M^{-1} h^2 (f_I(x_{t+1}) + f_E)
//! ```
//!
//! by the local-global scheme for mass-spring systems: the implicit step is
//! the minimiser of `1/2 |x - y|_M^2 + h^2 E(x)` with `y = x_t + h v_t +
//! h^2 M^{-1} f_E`. The local step fixes each spring's rest-length direction
//! `d = r (x_a - x_b) / |x_a - x_b|`; the global step solves
//! `(M + h^2 L) x = M y + h^2 J d`, whose matrix is constant per scene and is
//! factorised once.
//!
//! Per frame the order is: dynamics, pin reset, sphere collision.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloth::{build_cloth, grid_triangles, SimState, SpringSystem};
use crate::error::{Error, Result};
use crate::frames::{FrameMeta, FrameSequence};
use crate::linalg::{conjugate_gradient, BandedCholesky, CsrMatrix};
use crate::scene::{SceneConfig, Sphere};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LinearSolve {
    /// Banded Cholesky, factorised once per solver.
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    Iterative { max_iterations: usize, tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when the largest position change between two local-global
    /// iterations, divided by the mean spring rest length, drops below this.
    pub convergence_tolerance: f64,
    pub linear: LinearSolve,
    /// Accept the last iterate when `max_iterations` is reached instead of
    /// failing with [`Error::NonConvergence`].
    pub accept_unconverged: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tolerance: 1e-6,
            linear: LinearSolve::Direct,
            accept_unconverged: true,
        }
    }
}

impl SolverConfig {
    pub fn for_scene(scene: &SceneConfig) -> Self {
        Self { max_iterations: scene.solver_iterations, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidSolverConfig("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_tolerance > 0.0) {
            return Err(Error::InvalidSolverConfig("convergence_tolerance must be > 0".into()));
        }
        if let LinearSolve::Iterative { max_iterations, tolerance } = self.linear {
            if max_iterations < 1 || !(tolerance > 0.0) {
                return Err(Error::InvalidSolverConfig("iterative solve needs max_iterations >= 1 and tolerance > 0".into()));
            }
        }
        Ok(())
    }
}

/// External forces: gravity, triangle wind drag and velocity damping.
///
/// Wind on each triangle is `drag * area * ((w - v_tri) . n) n`, where `v_tri`
/// is the mean vertex velocity, split equally over the three vertices.
/// Triangles are visited in a fixed order, so the result is deterministic.
pub fn external_force(scene: &SceneConfig, state: &SimState) -> Vec<Vec3> {
    let m = scene.cloth.particle_mass;
    let c = scene.cloth.damping;
    let mut f: Vec<Vec3> = state.velocities.iter().map(|v| scene.gravity * m - v * (c * m)).collect();
    if let Some(wind) = &scene.wind {
        let w = wind.velocity();
        let x = &state.positions;
        let v = &state.velocities;
        for [a, b, d] in grid_triangles(scene.cloth.rows, scene.cloth.cols) {
            let cross = (x[b] - x[a]).cross(&(x[d] - x[a]));
            let len = cross.norm();
            if len == 0.0 {
                continue;
            }
            let area = 0.5 * len;
            let n = cross / len;
            let v_tri = (v[a] + v[b] + v[d]) / 3.0;
            let share = n * (wind.drag * area * (w - v_tri).dot(&n) / 3.0);
            f[a] += share;
            f[b] += share;
            f[d] += share;
        }
    }
    f
}

/// Push particles out of spheres along the radial direction, dropping the
/// inward normal velocity and scaling the tangential part by `1 - friction`.
/// A particle exactly at a centre is pushed along +y.
pub fn collide_spheres(mut state: SimState, colliders: &[Sphere]) -> SimState {
    collide_spheres_in_place(&mut state, colliders, &[]);
    state
}

fn collide_spheres_in_place(state: &mut SimState, colliders: &[Sphere], pinned: &[usize]) {
    for sphere in colliders {
        for (p, (x, v)) in state.positions.iter_mut().zip(state.velocities.iter_mut()).enumerate() {
            let offset = *x - sphere.center;
            let dist = offset.norm();
            if dist >= sphere.radius || pinned.binary_search(&p).is_ok() {
                continue;
            }
            let n = if dist > 0.0 { offset / dist } else { Vec3::y() };
            *x = sphere.center + n * sphere.radius;
            let vn = v.dot(&n);
            let normal = if vn < 0.0 { Vec3::zeros() } else { n * vn };
            let tangential = *v - n * vn;
            *v = normal + tangential * (1.0 - sphere.friction);
        }
    }
}

/// Outcome of one solver step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: SimState,
    pub iterations: usize,
    /// Final relative position change between the last two iterations.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
struct Neighbor {
    spring: usize,
    other: usize,
    stiffness: f64,
    /// +1 when this particle is the spring's `a` end, -1 for `b`.
    sign: f64,
}

enum Factor {
    Direct(BandedCholesky),
    Iterative { diag: Vec<f64>, max_iterations: usize, tolerance: f64 },
}

/// Pre-factorised implicit Euler solver for one scene.
pub struct Solver {
    system: SpringSystem,
    scene: SceneConfig,
    config: SolverConfig,
    /// Free (unpinned) particles in linear-system order.
    free: Vec<usize>,
    pinned_at: Vec<(usize, Vec3)>,
    is_pinned: Vec<bool>,
    neighbors: Vec<Vec<Neighbor>>,
    matrix: CsrMatrix,
    factor: Factor,
    char_length: f64,
}

impl Solver {
    pub fn new(scene: &SceneConfig, config: SolverConfig) -> Result<Self> {
        scene.validate()?;
        let system = build_cloth(&scene.cloth)?;
        Self::with_system(system, scene, config)
    }

    /// Build a solver around an arbitrary spring network living on the
    /// scene's particles.
    pub fn with_system(system: SpringSystem, scene: &SceneConfig, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let n = scene.cloth.particle_count();
        if system.particle_count != n || system.masses.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "spring system has {} particles, scene has {n}",
                system.particle_count
            )));
        }
        let rest = scene.initial_state()?;
        let mut is_pinned = vec![false; n];
        for &p in &scene.pinned {
            is_pinned[p] = true;
        }
        let pinned_at = scene.pinned.iter().map(|&p| (p, rest.positions[p])).collect();

        let h2 = scene.time_step * scene.time_step;
        let mut neighbors = vec![Vec::new(); n];
        for (k, s) in system.springs.iter().enumerate() {
            if s.stiffness == 0.0 {
                continue;
            }
            neighbors[s.a].push(Neighbor { spring: k, other: s.b, stiffness: s.stiffness, sign: 1.0 });
            neighbors[s.b].push(Neighbor { spring: k, other: s.a, stiffness: s.stiffness, sign: -1.0 });
        }

        // Order free particles along the shorter grid axis to keep the band narrow.
        let (rows, cols) = (scene.cloth.rows, scene.cloth.cols);
        let order: Vec<usize> = if cols <= rows {
            (0..n).collect()
        } else {
            (0..cols).flat_map(|j| (0..rows).map(move |i| i * cols + j)).collect()
        };
        let free: Vec<usize> = order.into_iter().filter(|&p| !is_pinned[p]).collect();
        let mut slot = vec![usize::MAX; n];
        for (k, &p) in free.iter().enumerate() {
            slot[p] = k;
        }
        let mut triplets = Vec::new();
        for (k, &p) in free.iter().enumerate() {
            let mut diag = system.masses[p];
            for nb in &neighbors[p] {
                diag += h2 * nb.stiffness;
                if !is_pinned[nb.other] {
                    triplets.push((k, slot[nb.other], -h2 * nb.stiffness));
                }
            }
            triplets.push((k, k, diag));
        }
        let matrix = CsrMatrix::from_triplets(free.len(), triplets);
        let factor = match config.linear {
            LinearSolve::Direct => Factor::Direct(BandedCholesky::factor(&matrix)?),
            LinearSolve::Iterative { max_iterations, tolerance } => {
                Factor::Iterative { diag: matrix.diagonal(), max_iterations, tolerance }
            }
        };
        let char_length = {
            let active: Vec<f64> =
                system.springs.iter().filter(|s| s.stiffness != 0.0).map(|s| s.rest_length).collect();
            if active.is_empty() {
                1.0
            } else {
                active.iter().sum::<f64>() / active.len() as f64
            }
        };
        Ok(Self {
            system,
            scene: scene.clone(),
            config,
            free,
            pinned_at,
            is_pinned,
            neighbors,
            matrix,
            factor,
            char_length,
        })
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn system(&self) -> &SpringSystem {
        &self.system
    }

    /// Advance one step. Fails with [`Error::NonConvergence`] (carrying the
    /// last iterate) unless the config accepts unconverged steps.
    pub fn step(&self, state: &SimState) -> Result<SimState> {
        let report = self.step_detailed(state)?;
        if !report.converged && !self.config.accept_unconverged {
            return Err(Error::NonConvergence {
                iterations: report.iterations,
                residual: report.residual,
                last: Box::new(report.state),
            });
        }
        Ok(report.state)
    }

    pub fn step_detailed(&self, state: &SimState) -> Result<StepReport> {
        let n = self.system.particle_count;
        if state.positions.len() != n || state.velocities.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "state has {} particles, solver expects {n}",
                state.positions.len()
            )));
        }
        let h = self.scene.time_step;
        let h2 = h * h;
        let masses = &self.system.masses;
        let f_ext = external_force(&self.scene, state);
        let y: Vec<Vec3> = (0..n)
            .map(|p| state.positions[p] + state.velocities[p] * h + f_ext[p] * (h2 / masses[p]))
            .collect();

        let mut x = y.clone();
        for &(p, at) in &self.pinned_at {
            x[p] = at;
        }
        let mut rhs = vec![Vec3::zeros(); self.free.len()];
        let mut residual = 0.0;
        let mut iterations = 0;
        let mut converged = self.free.is_empty();
        while !converged && iterations < self.config.max_iterations {
            iterations += 1;
            let d: Vec<Vec3> = self
                .system
                .springs
                .par_iter()
                .map(|s| {
                    let e = x[s.a] - x[s.b];
                    let len = e.norm();
                    if len > 0.0 {
                        e * (s.rest_length / len)
                    } else {
                        Vec3::zeros()
                    }
                })
                .collect();
            self.free
                .par_iter()
                .map(|&p| {
                    let mut b = y[p] * masses[p];
                    for nb in &self.neighbors[p] {
                        b += d[nb.spring] * (h2 * nb.stiffness * nb.sign);
                        if self.is_pinned[nb.other] {
                            b += x[nb.other] * (h2 * nb.stiffness);
                        }
                    }
                    b
                })
                .collect_into_vec(&mut rhs);
            match &self.factor {
                Factor::Direct(chol) => chol.solve_in_place(&mut rhs),
                Factor::Iterative { diag, max_iterations, tolerance } => {
                    let b = std::mem::take(&mut rhs);
                    let mut sol: Vec<Vec3> = self.free.iter().map(|&p| x[p]).collect();
                    conjugate_gradient(&self.matrix, diag, &b, &mut sol, *max_iterations, *tolerance);
                    rhs = sol;
                }
            }
            let mut change: f64 = 0.0;
            for (k, &p) in self.free.iter().enumerate() {
                change = change.max((rhs[k] - x[p]).amax());
                x[p] = rhs[k];
            }
            residual = change / self.char_length;
            converged = residual <= self.config.convergence_tolerance;
        }

        let mut velocities: Vec<Vec3> = x.iter().zip(&state.positions).map(|(a, b)| (a - b) / h).collect();
        for &(p, at) in &self.pinned_at {
            x[p] = at;
            velocities[p] = Vec3::zeros();
        }
        let mut next = SimState { positions: x, velocities, time_index: state.time_index + 1 };
        collide_spheres_in_place(&mut next, &self.scene.colliders, &self.scene.pinned);
        if !next.is_finite() {
            return Err(Error::NonFinite(next.time_index));
        }
        Ok(StepReport { state: next, iterations, residual, converged })
    }
}

/// One-shot step that builds (and factorises) a solver for this call only.
pub fn step(system: &SpringSystem, state: &SimState, scene: &SceneConfig, config: &SolverConfig) -> Result<SimState> {
    Solver::with_system(system.clone(), scene, *config)?.step(state)
}

/// A simulated trajectory with per-step wall-clock timing.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub frames: FrameSequence,
    /// Milliseconds spent in each step; `timings_ms[k]` produced frame `k + 1`.
    pub timings_ms: Vec<f64>,
    pub unconverged_steps: usize,
}

/// Run `scene.frame_count` steps from the scene's rest state.
pub fn simulate(scene: &SceneConfig, config: &SolverConfig) -> Result<SimulationRun> {
    simulate_with_scale(scene, config, 1.0)
}

pub(crate) fn simulate_with_scale(scene: &SceneConfig, config: &SolverConfig, world_scale: f64) -> Result<SimulationRun> {
    let solver = Solver::new(scene, *config)?;
    let mut state = scene.initial_state()?;
    let meta = FrameMeta {
        label: scene.name.clone(),
        scene_hash: scene.hash(),
        cloth: Some(scene.cloth.clone()),
        solver: Some(serde_json::to_string(config).expect("config serializes")),
        warmup_frames: 0,
    };
    let mut frames = FrameSequence::new(scene.cloth.rows, scene.cloth.cols, world_scale, meta);
    frames.push(state.positions.clone())?;
    let mut timings_ms = Vec::with_capacity(scene.frame_count);
    let mut unconverged_steps = 0;
    for frame in 1..=scene.frame_count {
        let start = Instant::now();
        let report = solver.step_detailed(&state).map_err(|e| Error::AtFrame { frame, source: Box::new(e) })?;
        timings_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if !report.converged {
            if !config.accept_unconverged {
                return Err(Error::AtFrame {
                    frame,
                    source: Box::new(Error::NonConvergence {
                        iterations: report.iterations,
                        residual: report.residual,
                        last: Box::new(report.state),
                    }),
                });
            }
            unconverged_steps += 1;
        }
        state = report.state;
        frames.push(state.positions.clone())?;
    }
    Ok(SimulationRun { frames, timings_ms, unconverged_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloth::{GridClothSpec, Layout, Spring, SpringKind};
    use crate::scene::{presets, Wind};

    fn small_scene(rows: usize, cols: usize) -> SceneConfig {
        SceneConfig {
            name: "small".into(),
            cloth: GridClothSpec {
                rows,
                cols,
                spacing: 0.1,
                particle_mass: 0.01,
                k_structural: 20.0,
                k_shear: 5.0,
                k_bend: 0.5,
                damping: 0.0,
            },
            layout: Layout::hanging(Vec3::new(0.0, 1.0, 0.0)),
            pinned: (0..cols).collect(),
            gravity: Vec3::new(0.0, -9.8, 0.0),
            wind: None,
            colliders: vec![],
            time_step: 0.02,
            solver_iterations: 50,
            frame_count: 10,
            sweep: None,
        }
    }

    #[test]
    fn gravity_only_force() {
        let mut s = small_scene(3, 3);
        s.cloth.particle_mass = 1.0;
        let f = external_force(&s, &s.initial_state().unwrap());
        assert!(f.iter().all(|v| *v == Vec3::new(0.0, -9.8, 0.0)));
    }

    #[test]
    fn wind_parallel_to_flat_cloth_is_zero() {
        let mut s = small_scene(4, 4);
        s.gravity = Vec3::zeros();
        // hanging layout spans the xy-plane; wind along x lies in it
        s.wind = Some(Wind { direction: Vec3::x(), strength: 3.0, drag: 2.0 });
        let f = external_force(&s, &s.initial_state().unwrap());
        assert!(f.iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn wind_on_flat_grid_by_hand() {
        // Flat 3x3 grid, unit spacing, wind along the normal with drag 1: every
        // triangle has area 1/2 and hands area/3 = 1/6 to each of its vertices.
        let mut s = small_scene(3, 3);
        s.cloth.spacing = 1.0;
        s.layout = Layout::xy(Vec3::zeros());
        s.gravity = Vec3::zeros();
        s.wind = Some(Wind { direction: Vec3::z(), strength: 1.0, drag: 1.0 });
        let f = external_force(&s, &s.initial_state().unwrap());
        // incident triangle counts under the a-d diagonal split
        let incident = [2.0, 3.0, 1.0, 3.0, 6.0, 3.0, 1.0, 3.0, 2.0];
        for (p, c) in incident.iter().enumerate() {
            assert!((f[p] - Vec3::new(0.0, 0.0, c / 6.0)).norm() < 1e-15, "particle {p}: {}", f[p]);
        }
    }

    #[test]
    fn zero_stiffness_is_inertial_drift() {
        let mut s = small_scene(3, 3);
        s.pinned.clear();
        s.gravity = Vec3::zeros();
        let mut sys = build_cloth(&s.cloth).unwrap();
        for sp in &mut sys.springs {
            sp.stiffness = 0.0;
        }
        let mut st = s.initial_state().unwrap();
        for (k, v) in st.velocities.iter_mut().enumerate() {
            *v = Vec3::new(k as f64, -1.0, 0.5);
        }
        let next = step(&sys, &st, &s, &SolverConfig { accept_unconverged: false, ..Default::default() }).unwrap();
        for p in 0..9 {
            let expect = st.positions[p] + st.velocities[p] * s.time_step;
            assert!((next.positions[p] - expect).norm() < 1e-14);
        }
        assert_eq!(next.time_index, 1);
    }

    #[test]
    fn hanging_spring_reaches_hooke_equilibrium() {
        // One vertical spring from pinned particle 0 to particle 3; everything
        // else pinned out of the way.
        let (m, g, k) = (0.05, 9.8, 40.0);
        let mut s = small_scene(3, 3);
        s.cloth.particle_mass = m;
        s.gravity = Vec3::new(0.0, -g, 0.0);
        s.pinned = (0..9).filter(|&p| p != 3).collect();
        s.time_step = 0.01;
        let rest = s.cloth.spacing;
        let sys = SpringSystem {
            particle_count: 9,
            springs: vec![Spring { a: 0, b: 3, rest_length: rest, stiffness: k, kind: SpringKind::Structural }],
            masses: vec![m; 9],
        };
        let solver = Solver::with_system(sys, &s, SolverConfig { max_iterations: 200, ..Default::default() }).unwrap();
        let mut st = s.initial_state().unwrap();
        for _ in 0..1000 {
            st = solver.step(&st).unwrap();
        }
        let extension = (st.positions[3] - st.positions[0]).norm() - rest;
        let expect = m * g / k;
        assert!((extension - expect).abs() / expect < 1e-4, "{extension} vs {expect}");
    }

    #[test]
    fn symmetric_spring_keeps_midpoint() {
        let mut s = small_scene(3, 3);
        s.gravity = Vec3::zeros();
        s.pinned.clear();
        let sys = SpringSystem {
            particle_count: 9,
            springs: vec![Spring { a: 0, b: 1, rest_length: 0.1, stiffness: 30.0, kind: SpringKind::Structural }],
            masses: vec![0.01; 9],
        };
        let solver = Solver::with_system(sys, &s, SolverConfig::default()).unwrap();
        let mut st = s.initial_state().unwrap();
        st.positions[0].x -= 0.03;
        st.positions[1].x += 0.03;
        let mid = (st.positions[0] + st.positions[1]) / 2.0;
        for _ in 0..50 {
            st = solver.step(&st).unwrap();
            let now = (st.positions[0] + st.positions[1]) / 2.0;
            assert!((now - mid).norm() < 1e-12);
        }
    }

    #[test]
    fn sphere_projection_and_friction() {
        let sphere = Sphere { center: Vec3::zeros(), radius: 1.0, friction: 0.0 };
        let outside = SimState {
            positions: vec![Vec3::new(2.0, 0.0, 0.0)],
            velocities: vec![Vec3::new(-1.0, 0.0, 0.0)],
            time_index: 0,
        };
        assert_eq!(collide_spheres(outside.clone(), &[sphere]), outside);

        let inside = SimState {
            positions: vec![Vec3::new(0.0, 0.5, 0.0)],
            velocities: vec![Vec3::new(0.3, -2.0, 0.1)],
            time_index: 0,
        };
        let out = collide_spheres(inside.clone(), &[sphere]);
        assert!((out.positions[0] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert_eq!(out.velocities[0], Vec3::new(0.3, 0.0, 0.1));

        let sticky = Sphere { friction: 1.0, ..sphere };
        let out = collide_spheres(inside, &[sticky]);
        assert_eq!(out.velocities[0], Vec3::zeros());

        let centre = SimState { positions: vec![Vec3::zeros()], velocities: vec![Vec3::zeros()], time_index: 0 };
        assert_eq!(collide_spheres(centre, &[sphere]).positions[0], Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn zero_frames_gives_initial_state_only() {
        let mut s = small_scene(4, 4);
        s.frame_count = 0;
        let run = simulate(&s, &SolverConfig::default()).unwrap();
        assert_eq!(run.frames.len(), 1);
        assert_eq!(run.frames.frames[0], s.initial_state().unwrap().positions);
    }

    #[test]
    fn fully_pinned_cloth_never_moves() {
        let mut s = small_scene(4, 5);
        s.pinned = (0..20).collect();
        s.wind = Some(Wind { direction: Vec3::z(), strength: 5.0, drag: 1.0 });
        let run = simulate(&s, &SolverConfig::default()).unwrap();
        assert!(run.frames.frames.iter().all(|f| f == &run.frames.frames[0]));
    }

    #[test]
    fn pins_exact_and_no_penetration() {
        let mut s = presets::collision();
        s.cloth.rows = 13;
        s.cloth.cols = 13;
        s.cloth.spacing = 0.05;
        s.layout.origin = Vec3::new(-0.3, 0.5, -0.3);
        s.pinned = vec![0, 12];
        s.frame_count = 60;
        let rest = s.initial_state().unwrap();
        let run = simulate(&s, &SolverConfig::default()).unwrap();
        let sphere = s.colliders[0];
        for f in &run.frames.frames {
            assert_eq!(f[0], rest.positions[0]);
            assert_eq!(f[12], rest.positions[12]);
            for p in f {
                assert!((p - sphere.center).norm() >= sphere.radius - 1e-9);
            }
        }
    }

    #[test]
    fn iterative_linear_solve_agrees_with_direct() {
        let mut s = small_scene(6, 7);
        s.wind = Some(Wind { direction: Vec3::z(), strength: 2.0, drag: 0.5 });
        s.frame_count = 5;
        let cfg = SolverConfig { max_iterations: 30, ..Default::default() };
        let direct = simulate(&s, &cfg).unwrap();
        let cg = simulate(
            &s,
            &SolverConfig { linear: LinearSolve::Iterative { max_iterations: 500, tolerance: 1e-14 }, ..cfg },
        )
        .unwrap();
        for (a, b) in direct.frames.frames.iter().zip(&cg.frames.frames) {
            for (p, q) in a.iter().zip(b) {
                assert!((p - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn non_convergence_is_reported_with_last_iterate() {
        let s = small_scene(5, 5);
        let cfg = SolverConfig { max_iterations: 1, convergence_tolerance: 1e-15, accept_unconverged: false, ..Default::default() };
        let solver = Solver::new(&s, cfg).unwrap();
        match solver.step(&s.initial_state().unwrap()) {
            Err(Error::NonConvergence { iterations: 1, last, .. }) => assert_eq!(last.time_index, 1),
            other => panic!("expected non-convergence, got {other:?}"),
        }
        let mut s2 = s.clone();
        s2.frame_count = 3;
        assert!(matches!(simulate(&s2, &cfg), Err(Error::AtFrame { frame: 1, .. })));
    }

    #[test]
    fn parallel_matches_serial_bitwise() {
        let mut s = presets::flag();
        s.cloth.rows = 9;
        s.cloth.cols = 13;
        s.pinned = (0..9).map(|i| i * 13).collect();
        s.frame_count = 20;
        let cfg = SolverConfig::default();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| simulate(&s, &cfg).unwrap())
        };
        assert_eq!(run(1).frames, run(3).frames);
    }
}
