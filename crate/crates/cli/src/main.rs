use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use minicloth::eval::{evaluate, FrameTiming};
use minicloth::frames::FrameSequence;
use minicloth::mlp::{init_model, load_model, preset_dims, save_model, train, ModelMeta, TrainConfig};
use minicloth::obj::export_obj_sequence;
use minicloth::patches::{Dataset, FeatureKind, NormMode, PatchEncoder};
use minicloth::pipeline::{bench, build_dataset, dnn_for_scene, interp_for_scene, run_miniature, BenchMethod};
use minicloth::scene::SceneConfig;
use minicloth::solver::{simulate, LinearSolve, SolverConfig};
use minicloth::upscale::InterpMethod;

#[derive(Parser)]
#[command(name = "minicloth", version, about = "Miniature cloth simulation with learned upscaling")]
struct Cli {
    /// Seed for weight initialisation and batch shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; 1 gives the reference (bit-exact) behaviour.
    #[arg(long, global = true, env = "MINICLOTH_THREADS")]
    threads: Option<usize>,

    /// DSDS factor.
    #[arg(long = "f", global = true)]
    factor: Option<usize>,

    #[arg(long, global = true)]
    feature_kind: Option<FeatureArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Pos3frames,
    Pos,
    Posvel,
}

impl From<FeatureArg> for FeatureKind {
    fn from(a: FeatureArg) -> Self {
        match a {
            FeatureArg::Pos3frames => FeatureKind::Pos3Frames,
            FeatureArg::Pos => FeatureKind::Pos,
            FeatureArg::Posvel => FeatureKind::PosVel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Local,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinearArg {
    Direct,
    Cg,
}

#[derive(Args)]
struct SolverArgs {
    /// Local-global iterations per step (default: the scene's value).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, value_enum, default_value_t = LinearArg::Direct)]
    linear: LinearArg,
    /// Fail on the first step that does not reach the tolerance.
    #[arg(long)]
    strict: bool,
    /// Override the scene's frame count.
    #[arg(long)]
    frames: Option<usize>,
}

impl SolverArgs {
    fn apply(&self, scene: &mut SceneConfig) -> SolverConfig {
        if let Some(n) = self.frames {
            scene.frame_count = n;
        }
        SolverConfig {
            max_iterations: self.iterations.unwrap_or(scene.solver_iterations),
            convergence_tolerance: self.tolerance,
            linear: match self.linear {
                LinearArg::Direct => LinearSolve::Direct,
                LinearArg::Cg => LinearSolve::Iterative { max_iterations: 500, tolerance: 1e-10 },
            },
            accept_unconverged: !self.strict,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene at full resolution (every sweep variant, if any).
    Simulate {
        scene: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        timing_csv: Option<PathBuf>,
    },
    /// Build training pairs from target trajectories.
    Gendata {
        #[arg(required = true)]
        frames: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = NormArg::Local)]
        norm: NormArg,
    },
    /// Train an upscaling network.
    Train {
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Architecture: "N*FC-V" or "fig4".
        #[arg(long, default_value = "fig4")]
        preset: String,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 4096)]
        batch: usize,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 20)]
        patience: usize,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Simulate the miniature of a scene and upscale it.
    Run {
        scene: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Use an interpolation method instead of a model.
        #[arg(long)]
        interp: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        timing_csv: Option<PathBuf>,
    },
    /// Per-particle error of a trajectory against ground truth.
    Eval {
        candidate: PathBuf,
        truth: PathBuf,
        #[arg(long)]
        from: Option<usize>,
        #[arg(long)]
        to: Option<usize>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare full simulation, DNN and interpolation timings and errors.
    Bench {
        scene: PathBuf,
        #[arg(long)]
        model: Vec<PathBuf>,
        /// Comma-separated: full, dnn, bilinear, biquadratic, bicubic.
        #[arg(long, default_value = "full,dnn,bilinear,biquadratic,bicubic", value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write one OBJ file per frame.
    ExportObj {
        frames: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = real_main(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().context("configuring thread pool")?;
    }
    let encoder = |norm: NormMode| PatchEncoder {
        kind: cli.feature_kind.map(FeatureKind::from).unwrap_or(FeatureKind::Pos3Frames),
        norm,
        factor: cli.factor.unwrap_or(2),
    };
    match &cli.command {
        Command::Simulate { scene, out, solver, timing_csv } => {
            let mut base = SceneConfig::load(scene)?;
            let cfg = solver.apply(&mut base);
            let variants = base.variants();
            for (k, s) in variants.iter().enumerate() {
                let path = if variants.len() == 1 { out.clone() } else { numbered(out, k) };
                let cfg = SolverConfig { max_iterations: solver.iterations.unwrap_or(s.solver_iterations), ..cfg };
                let run = simulate(s, &cfg)?;
                run.frames.save(&path).with_context(|| format!("writing {}", path.display()))?;
                if let Some(csv) = timing_csv {
                    let csv = if variants.len() == 1 { csv.clone() } else { numbered(csv, k) };
                    let mut rows = vec![FrameTiming::default()];
                    rows.extend(run.timings_ms.iter().map(|&ms| FrameTiming { sim_ms: ms, infer_ms: 0.0, total_ms: ms }));
                    fs::write(&csv, minicloth::eval::timing_csv(&rows))?;
                }
                let mean = run.timings_ms.iter().sum::<f64>() / run.timings_ms.len().max(1) as f64;
                println!(
                    "{}: {} frames, {:.3} ms/frame, {} unconverged steps -> {}",
                    s.name,
                    run.frames.len(),
                    mean,
                    run.unconverged_steps,
                    path.display()
                );
            }
        }
        Command::Gendata { frames, out, norm } => {
            let norm = match norm {
                NormArg::Local => NormMode::Local,
                NormArg::Raw => NormMode::Raw,
            };
            let runs = frames
                .iter()
                .map(|p| FrameSequence::load(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&FrameSequence> = runs.iter().collect();
            let ds = build_dataset(&refs, encoder(norm))?;
            ds.save(out)?;
            println!("{} pairs ({} -> {}) -> {}", ds.len(), ds.input_dim(), ds.output_dim(), out.display());
        }
        Command::Train { data, out, preset, lr, batch, epochs, patience, max_steps, loss_csv } => {
            let ds = Dataset::load(data)?;
            if let Some(f) = cli.factor {
                if f != ds.encoder.factor {
                    bail!("dataset was built with f={}, --f {} given", ds.encoder.factor, f);
                }
            }
            if let Some(k) = cli.feature_kind.map(FeatureKind::from) {
                if k != ds.encoder.kind {
                    bail!("dataset has feature kind {}, --feature-kind {} given", ds.encoder.kind, k);
                }
            }
            let dims = preset_dims(preset, ds.input_dim(), ds.output_dim())?;
            let model = init_model(&dims, cli.seed)?.with_meta(ModelMeta::new(ds.encoder));
            let cfg = TrainConfig {
                learning_rate: *lr,
                batch_size: *batch,
                max_epochs: *epochs,
                patience: *patience,
                seed: cli.seed,
                max_steps: *max_steps,
                ..TrainConfig::default()
            };
            let outcome = train(&ds, model, &cfg)?;
            save_model(&outcome.model, out)?;
            if let Some(csv) = loss_csv {
                fs::write(csv, outcome.history_csv())?;
            }
            let best = &outcome.history[outcome.best_epoch];
            println!(
                "{dims:?}: {} steps, stop {:?}, best epoch {} (train {:.4e}, val {:.4e}) -> {}",
                outcome.steps,
                outcome.stop,
                best.epoch,
                best.train_mse,
                best.val_mse,
                out.display()
            );
        }
        Command::Run { scene, model, interp, out, solver, timing_csv } => {
            let mut scene = SceneConfig::load(scene)?;
            let cfg = solver.apply(&mut scene);
            let upscaler = match (model, interp) {
                (Some(m), None) => {
                    let model = load_model(m)?;
                    let requested = match (cli.factor, cli.feature_kind, &model.meta) {
                        (None, None, Some(_)) => None,
                        (_, _, Some(meta)) => Some(PatchEncoder {
                            kind: cli.feature_kind.map(Into::into).unwrap_or(meta.encoder.kind),
                            factor: cli.factor.unwrap_or(meta.encoder.factor),
                            ..meta.encoder
                        }),
                        (_, _, None) => Some(encoder(NormMode::Local)),
                    };
                    dnn_for_scene(&scene, model, requested)?
                }
                (None, Some(method)) => interp_for_scene(&scene, method.parse::<InterpMethod>()?, cli.factor.unwrap_or(2))?,
                _ => bail!("give exactly one of --model or --interp"),
            };
            let run = run_miniature(&scene, &upscaler, &cfg)?;
            run.frames.save(out)?;
            if let Some(csv) = timing_csv {
                fs::write(csv, minicloth::eval::timing_csv(&run.timings))?;
            }
            let n = run.timings.len() as f64;
            let sum = |f: fn(&FrameTiming) -> f64| run.timings.iter().map(f).sum::<f64>() / n;
            println!(
                "{} frames, miniature {} particles, target {}: sim {:.3} + infer {:.3} = {:.3} ms/frame -> {}",
                run.frames.len(),
                run.miniature.particle_count(),
                run.frames.particle_count(),
                sum(|t| t.sim_ms),
                sum(|t| t.infer_ms),
                sum(|t| t.total_ms),
                out.display()
            );
        }
        Command::Eval { candidate, truth, from, to, json } => {
            let c = FrameSequence::load(candidate)?;
            let t = FrameSequence::load(truth)?;
            let range = match (from, to) {
                (None, None) => None,
                (a, b) => Some(a.unwrap_or(0)..b.unwrap_or(c.len().min(t.len()))),
            };
            let report = evaluate(&c, &t, range)?;
            if let Some(j) = json {
                fs::write(j, report.to_json())?;
            }
            print!("{}", report.to_text());
        }
        Command::Bench { scene, model, methods, repeats, solver, json } => {
            let mut scene = SceneConfig::load(scene)?;
            let cfg = solver.apply(&mut scene);
            let mut list = Vec::new();
            for m in methods {
                match m.as_str() {
                    "full" => list.push(BenchMethod::Full),
                    "dnn" => {
                        if model.is_empty() {
                            bail!("method 'dnn' needs at least one --model");
                        }
                        for p in model {
                            list.push(BenchMethod::Miniature(dnn_for_scene(&scene, load_model(p)?, None)?));
                        }
                    }
                    other => {
                        let method: InterpMethod = other.parse()?;
                        list.push(BenchMethod::Miniature(interp_for_scene(&scene, method, cli.factor.unwrap_or(2))?));
                    }
                }
            }
            let table = bench(&scene, &cfg, &list, *repeats)?;
            if let Some(j) = json {
                fs::write(j, table.to_json())?;
            }
            print!("{}", table.to_text());
        }
        Command::ExportObj { frames, out } => {
            let seq = FrameSequence::load(frames)?;
            let paths = export_obj_sequence(&seq, out).with_context(|| format!("writing to {}", out.display()))?;
            println!("{} OBJ files -> {}", paths.len(), out.display());
        }
    }
    Ok(())
}

/// `dir/name.ext` -> `dir/name-k.ext`
fn numbered(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{k}"),
    };
    path.with_file_name(name)
}
