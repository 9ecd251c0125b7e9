use minicloth::cloth::{rest_state, Layout};
use minicloth::dsds::{down_sample_frames, down_sample_spec, DsdsMapping};
use minicloth::eval::evaluate;
use minicloth::frames::FrameSequence;
use minicloth::mlp::{adam_step, backward, init_model, AdamState, MlpModel, ModelMeta};
use minicloth::patches::{Dataset, FeatureKind, NormMode, PatchEncoder};
use minicloth::scene::presets;
use minicloth::solver::{simulate, SolverConfig};
use minicloth::upscale::DnnUpscaler;
use minicloth::Vec3;
use ndarray::ArrayView2;

fn encoder() -> PatchEncoder {
    PatchEncoder { kind: FeatureKind::Pos3Frames, norm: NormMode::Local, factor: 2 }
}

/// Full-batch Adam until the dataset MSE drops below `target`.
fn overfit(ds: &Dataset, dims: &[usize], target: f64) -> (MlpModel, f64) {
    let x = ArrayView2::from_shape((ds.len(), ds.input_dim()), &ds.inputs).unwrap();
    let g = ArrayView2::from_shape((ds.len(), ds.output_dim()), &ds.outputs).unwrap();
    let mut model = init_model(dims, 1).unwrap().with_meta(ModelMeta::new(ds.encoder));
    let mut adam = AdamState::new(&model);
    let mut mse = f64::INFINITY;
    while adam.step < 25_000 {
        let (l, grads) = backward(&model, x, g).unwrap();
        mse = l;
        if mse < target {
            break;
        }
        adam_step(&mut model, &grads, &mut adam, 1e-3);
    }
    (model, mse)
}

#[test]
fn overfit_model_reproduces_its_trajectory() {
    let mut scene = presets::flag();
    scene.cloth.rows = 5;
    scene.cloth.cols = 7;
    scene.pinned = (0..5).map(|i| i * 7).collect();
    scene.frame_count = 6;
    let truth = simulate(&scene, &SolverConfig::for_scene(&scene)).unwrap().frames;
    let ds = Dataset::from_trajectory(&truth, encoder()).unwrap();
    assert_eq!(ds.len(), 6 * 5);
    let (model, mse) = overfit(&ds, &[36, 64, 64, 64, 27], 1e-8);
    assert!(mse < 1e-6, "did not overfit: {mse:e}");

    let map = DsdsMapping::new(5, 7, 2).unwrap();
    let mini = down_sample_frames(&truth, &map).unwrap();
    let up = DnnUpscaler::new(model, map, None).unwrap();
    let out = up.upscale_sequence(&mini).unwrap();
    assert_eq!(out.len(), truth.len());
    let report = evaluate(&out, &truth, Some(2..truth.len())).unwrap();
    // assembly must not add error beyond the fit itself
    let bound = 10.0 * mse.sqrt();
    assert!(report.max_error < bound, "{} vs {bound}", report.max_error);
}

#[test]
fn flat_rest_identity_model() {
    let spec = minicloth::cloth::GridClothSpec { rows: 9, cols: 9, ..presets::flag().cloth };
    let layout = Layout::hanging(Vec3::new(0.0, 1.0, 0.0));
    let (ms, map) = down_sample_spec(&spec, 2).unwrap();
    let target = rest_state(&spec, &layout).unwrap().positions;
    let mut seq = FrameSequence::new(9, 9, 1.0, Default::default());
    for _ in 0..3 {
        seq.push(target.clone()).unwrap();
    }
    let ds = Dataset::from_trajectory(&seq, encoder()).unwrap();
    let (model, mse) = overfit(&ds, &[36, 32, 27], 1e-12);
    let up = DnnUpscaler::new(model, map, None).unwrap();
    let mini = rest_state(&ms, &Layout { origin: layout.origin / 2.0, ..layout }).unwrap().positions;
    let out = up.upscale([&mini, &mini, &mini]).unwrap();
    let worst = out.iter().zip(&target).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst < 10.0 * mse.sqrt().max(1e-9), "worst {worst:e}, mse {mse:e}");
}
