use std::path::PathBuf;

use minicloth::scene::{presets, SceneConfig};
use minicloth::solver::{simulate, SolverConfig};

fn scene_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name)
}

#[test]
fn shipped_scenes_match_presets() {
    let curtain = SceneConfig::load(scene_file("curtain.toml")).unwrap();
    assert_eq!(curtain, presets::curtain());

    let mut flag = SceneConfig::load(scene_file("flag.toml")).unwrap();
    assert_eq!(flag.variants().len(), 3);
    flag.sweep = None;
    assert_eq!(flag, presets::flag());

    let collision = SceneConfig::load(scene_file("collision.toml")).unwrap();
    assert_eq!(collision, presets::collision());

    let reversed = SceneConfig::load(scene_file("flag_reversed.toml")).unwrap();
    let w = reversed.wind.unwrap();
    assert!((w.direction + presets::flag().wind.unwrap().direction).norm() < 1e-15);
}

#[test]
fn curtain_stays_finite_for_a_thousand_frames() {
    let mut scene = presets::curtain();
    scene.frame_count = 1000;
    let run = simulate(&scene, &SolverConfig::for_scene(&scene)).unwrap();
    assert_eq!(run.frames.len(), 1001);
    assert!(run.frames.frames.iter().flatten().all(|p| p.iter().all(|v| v.is_finite())));
    // top row never moves
    let first = &run.frames.frames[0];
    let last = run.frames.frames.last().unwrap();
    for &p in &scene.pinned {
        assert_eq!(first[p], last[p]);
    }
}

#[test]
fn collision_scene_never_penetrates() {
    let mut scene = presets::collision();
    scene.frame_count = 120;
    let run = simulate(&scene, &SolverConfig::for_scene(&scene)).unwrap();
    let s = &scene.colliders[0];
    for frame in &run.frames.frames {
        for p in frame {
            assert!((p - s.center).norm() >= s.radius - 1e-9);
        }
    }
}
