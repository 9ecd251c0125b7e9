//! End-to-end orchestration: ground truth, datasets, miniature playback and
//! benchmarks.
//!
//! Timings cover solver steps and upscaling only; file I/O is never inside a
//! timed region.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dsds::{down_scale_scene, DsdsMapping};
use crate::error::{Error, Result};
use crate::eval::{evaluate, median, FrameTiming};
use crate::frames::{FrameMeta, FrameSequence};
use crate::mlp::MlpModel;
use crate::patches::{Dataset, PatchEncoder};
use crate::scene::SceneConfig;
use crate::solver::{simulate, SimulationRun, Solver, SolverConfig};
use crate::upscale::{upscale_interp, DnnUpscaler, InterpMethod, WARMUP_FRAMES};
use crate::Vec3;

/// Ground-truth runs for every sweep variant of `scene`.
pub fn simulate_variants(scene: &SceneConfig, config: &SolverConfig) -> Result<Vec<SimulationRun>> {
    scene.variants().iter().map(|s| simulate(s, &SolverConfig { max_iterations: s.solver_iterations, ..*config })).collect()
}

/// Concatenated training pairs from one or more target trajectories.
pub fn build_dataset(runs: &[&FrameSequence], encoder: PatchEncoder) -> Result<Dataset> {
    if runs.is_empty() {
        return Err(Error::InvalidTrainConfig("no trajectories given".into()));
    }
    let mut ds = Dataset::new(encoder);
    for run in runs {
        ds.append(&Dataset::from_trajectory(run, encoder)?)?;
    }
    Ok(ds)
}

/// How miniature frames are lifted to the target grid.
pub enum Upscaler {
    Dnn(DnnUpscaler),
    Interp { method: InterpMethod, mapping: DsdsMapping },
}

impl Upscaler {
    pub fn mapping(&self) -> &DsdsMapping {
        match self {
            Upscaler::Dnn(d) => d.mapping(),
            Upscaler::Interp { mapping, .. } => mapping,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Upscaler::Dnn(_) => "dnn".into(),
            Upscaler::Interp { method, .. } => method.to_string(),
        }
    }

    fn upscale(&self, mini: &FrameSequence, t: usize) -> Result<Vec<Vec3>> {
        match self {
            Upscaler::Dnn(d) => d.upscale_frame(mini, t),
            Upscaler::Interp { method, mapping } => upscale_interp(&mini.frames[t], mapping, *method),
        }
    }
}

/// Upscaler for a scene from a trained model.
pub fn dnn_for_scene(scene: &SceneConfig, model: MlpModel, requested: Option<PatchEncoder>) -> Result<Upscaler> {
    let factor = model
        .meta
        .as_ref()
        .map(|m| m.encoder.factor)
        .or(requested.map(|r| r.factor))
        .ok_or_else(|| Error::InvalidModel("model records no DSDS factor".into()))?;
    let mapping = DsdsMapping::new(scene.cloth.rows, scene.cloth.cols, factor)?;
    Ok(Upscaler::Dnn(DnnUpscaler::new(model, mapping, requested)?))
}

pub fn interp_for_scene(scene: &SceneConfig, method: InterpMethod, factor: usize) -> Result<Upscaler> {
    Ok(Upscaler::Interp { method, mapping: DsdsMapping::new(scene.cloth.rows, scene.cloth.cols, factor)? })
}

#[derive(Debug, Clone)]
pub struct PlaybackRun {
    /// Upscaled target-resolution frames.
    pub frames: FrameSequence,
    pub miniature: FrameSequence,
    /// One entry per output frame; frame 0 has no solver step.
    pub timings: Vec<FrameTiming>,
    pub unconverged_steps: usize,
}

/// Simulate the down-scaled miniature of `scene` and upscale every frame.
pub fn run_miniature(scene: &SceneConfig, upscaler: &Upscaler, config: &SolverConfig) -> Result<PlaybackRun> {
    let mapping = *upscaler.mapping();
    if (mapping.target_rows, mapping.target_cols) != (scene.cloth.rows, scene.cloth.cols) {
        return Err(Error::ModelMismatch {
            field: "grid",
            model: format!("{}x{}", mapping.target_rows, mapping.target_cols),
            scene: format!("{}x{}", scene.cloth.rows, scene.cloth.cols),
        });
    }
    let mini_scene = down_scale_scene(scene, mapping.factor)?;
    let solver = Solver::new(&mini_scene, *config)?;
    let mut state = mini_scene.initial_state()?;
    let mini_meta = FrameMeta {
        label: mini_scene.name.clone(),
        scene_hash: mini_scene.hash(),
        cloth: Some(mini_scene.cloth.clone()),
        solver: Some(serde_json::to_string(config).expect("config serializes")),
        warmup_frames: 0,
    };
    let mut mini = FrameSequence::new(mapping.mini_rows, mapping.mini_cols, 1.0 / mapping.factor as f64, mini_meta);
    let target_meta = FrameMeta {
        label: format!("{}-{}x{}", scene.name, upscaler.label(), mapping.factor),
        scene_hash: scene.hash(),
        cloth: Some(scene.cloth.clone()),
        solver: mini.meta.solver.clone(),
        warmup_frames: if matches!(upscaler, Upscaler::Dnn(_)) { WARMUP_FRAMES.min(scene.frame_count + 1) } else { 0 },
    };
    let mut frames = FrameSequence::new(scene.cloth.rows, scene.cloth.cols, 1.0, target_meta);
    let mut timings = Vec::with_capacity(scene.frame_count + 1);
    let mut unconverged_steps = 0;

    mini.push(state.positions.clone())?;
    for t in 0..=scene.frame_count {
        let mut sim_ms = 0.0;
        if t > 0 {
            let start = Instant::now();
            let report = solver.step_detailed(&state).map_err(|e| Error::AtFrame { frame: t, source: Box::new(e) })?;
            sim_ms = start.elapsed().as_secs_f64() * 1e3;
            if !report.converged {
                if !config.accept_unconverged {
                    return Err(Error::AtFrame {
                        frame: t,
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
            mini.push(state.positions.clone())?;
        }
        let start = Instant::now();
        let target = upscaler.upscale(&mini, t)?;
        let infer_ms = start.elapsed().as_secs_f64() * 1e3;
        frames.push(target)?;
        timings.push(FrameTiming { sim_ms, infer_ms, total_ms: sim_ms + infer_ms });
    }
    Ok(PlaybackRun { frames, miniature: mini, timings, unconverged_steps })
}

pub enum BenchMethod {
    /// Full-resolution simulation.
    Full,
    Miniature(Upscaler),
}

impl BenchMethod {
    pub fn label(&self) -> String {
        match self {
            BenchMethod::Full => "full".into(),
            BenchMethod::Miniature(u) => format!("{} f={}", u.label(), u.mapping().factor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub particles_simulated: usize,
    /// Median over repeats of the mean total ms per frame (first step excluded).
    pub ms_per_frame: f64,
    pub sim_ms: f64,
    pub infer_ms: f64,
    /// Mean per-particle error against the full-resolution run.
    pub mean_error: f64,
    /// Max minus min of `mean_error` across repeats.
    pub error_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub scene: String,
    pub frames: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("scene {}  frames {}  repeats {}\n\n", self.scene, self.frames, self.repeats);
        s.push_str(&format!(
            "{:<18} {:>9} {:>12} {:>10} {:>10} {:>12}\n",
            "method", "particles", "ms/frame", "sim_ms", "infer_ms", "error"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<18} {:>9} {:>12.3} {:>10.3} {:>10.3} {:>12.4e}\n",
                r.method, r.particles_simulated, r.ms_per_frame, r.sim_ms, r.infer_ms, r.mean_error
            ));
        }
        s
    }

    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Mean of per-frame timings after the warm-up step.
fn steady_means(timings: &[FrameTiming]) -> (f64, f64, f64) {
    let steady = if timings.len() > 2 { &timings[2..] } else { timings };
    let n = steady.len().max(1) as f64;
    let sum = steady.iter().fold((0.0, 0.0, 0.0), |a, t| (a.0 + t.sim_ms, a.1 + t.infer_ms, a.2 + t.total_ms));
    (sum.0 / n, sum.1 / n, sum.2 / n)
}

/// Time each method `repeats` times on `scene` and score it against the
/// full-resolution simulation.
pub fn bench(scene: &SceneConfig, config: &SolverConfig, methods: &[BenchMethod], repeats: usize) -> Result<BenchTable> {
    let repeats = repeats.max(1);
    let mut truth: Option<FrameSequence> = None;
    let mut full_timings = Vec::new();
    let run_full = |truth: &mut Option<FrameSequence>| -> Result<Vec<FrameTiming>> {
        let run = simulate(scene, config)?;
        let mut t = vec![FrameTiming::default()];
        t.extend(run.timings_ms.iter().map(|&ms| FrameTiming { sim_ms: ms, infer_ms: 0.0, total_ms: ms }));
        truth.get_or_insert(run.frames);
        Ok(t)
    };
    if methods.iter().any(|m| matches!(m, BenchMethod::Full)) {
        for _ in 0..repeats {
            full_timings.push(run_full(&mut truth)?);
        }
    } else {
        run_full(&mut truth)?;
    }
    let truth = truth.expect("ground truth simulated");

    let mut rows = Vec::new();
    for m in methods {
        let (runs, errors, particles) = match m {
            BenchMethod::Full => (full_timings.clone(), vec![0.0; repeats], scene.cloth.particle_count()),
            BenchMethod::Miniature(up) => {
                let mut runs = Vec::new();
                let mut errors = Vec::new();
                for _ in 0..repeats {
                    let run = run_miniature(scene, up, config)?;
                    errors.push(evaluate(&run.frames, &truth, None)?.mean_error);
                    runs.push(run.timings);
                }
                (runs, errors, up.mapping().mini_count())
            }
        };
        let means: Vec<(f64, f64, f64)> = runs.iter().map(|t| steady_means(t)).collect();
        let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rows.push(BenchRow {
            method: m.label(),
            particles_simulated: particles,
            ms_per_frame: median(&means.iter().map(|m| m.2).collect::<Vec<_>>()),
            sim_ms: median(&means.iter().map(|m| m.0).collect::<Vec<_>>()),
            infer_ms: median(&means.iter().map(|m| m.1).collect::<Vec<_>>()),
            mean_error: median(&errors),
            error_spread: hi - lo,
        });
    }
    Ok(BenchTable { scene: scene.name.clone(), frames: scene.frame_count, repeats, rows })
}
