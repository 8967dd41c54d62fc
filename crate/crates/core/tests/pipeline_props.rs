use std::path::Path;

use reenact_core::charmesh::{make_sample_character, skin_sequence, CharacterSpec};
use reenact_core::conditioning::{read_stack, ConditioningMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reenact_core::kinematics::Pose;
use reenact_core::motion::{Motion, MotionKind, ProceduralMotion};
use reenact_core::pipeline::{build_dataset, reenact, CharacterSource, DatasetConfig, MotionSource, ReenactConfig, RenderSettings, Split};
use reenact_core::retarget::{retarget_sequence, RetargetConfig};
use reenact_core::{Error, Exec, Vec3};

fn settings(mode: ConditioningMode) -> RenderSettings {
    RenderSettings { resolution: 48, mode, ..Default::default() }
}

fn walk(frames: usize) -> MotionSource {
    MotionSource::Procedural(ProceduralMotion { kind: MotionKind::Walk, frames, fps: 25.0, seed: 4 })
}

fn stack_bytes(root: &Path, rel: &Path) -> Vec<u8> {
    std::fs::read(root.join(rel)).unwrap()
}

#[test]
fn identity_reenactment_reproduces_dataset_stacks() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let re_dir = dir.path().join("re");
    let dataset = build_dataset(
        &DatasetConfig {
            motion: walk(70),
            render: settings(ConditioningMode::RgbdParts),
            out_dir: data_dir.clone(),
            ..Default::default()
        },
        Exec::default(),
    )
    .unwrap();
    let out = reenact(
        &ReenactConfig {
            source: CharacterSource::default(),
            source_motion: walk(70),
            target: CharacterSource::default(),
            target_motion: None,
            retarget: RetargetConfig::default(),
            render: settings(ConditioningMode::RgbdParts),
            out_dir: re_dir.clone(),
            resume: false,
        },
        Exec::default(),
    )
    .unwrap();
    assert_eq!(out.manifest.frames.len(), 70);
    assert!(out.report.max_residual() < 1e-10);
    for (a, b) in dataset.frames.iter().zip(&out.manifest.frames) {
        assert_eq!(a.frame_index, b.frame_index);
        assert_eq!(b.split, Split::Test);
        assert_eq!(stack_bytes(&data_dir, &a.stack_path), stack_bytes(&re_dir, &b.stack_path), "frame {}", a.frame_index);
    }
    let s = read_stack(&re_dir.join(&out.manifest.frames[0].stack_path)).unwrap();
    assert_eq!(s.planes.channels, 27);
}

#[test]
fn sequential_and_parallel_datasets_match() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for (name, exec) in [("seq", Exec::Sequential), ("par", Exec::Parallel)] {
        let out = dir.path().join(name);
        let m = build_dataset(
            &DatasetConfig { motion: walk(20), render: settings(ConditioningMode::RgbMask), out_dir: out.clone(), ..Default::default() },
            exec,
        )
        .unwrap();
        manifests.push((out, m));
    }
    let (a, b) = (&manifests[0], &manifests[1]);
    for (fa, fb) in a.1.frames.iter().zip(&b.1.frames) {
        assert_eq!(stack_bytes(&a.0, &fa.stack_path), stack_bytes(&b.0, &fb.stack_path));
        assert_eq!(stack_bytes(&a.0, &fa.target_path), stack_bytes(&b.0, &fb.target_path));
    }
}

#[test]
fn nan_frame_is_reported_by_index() {
    let (mesh, skel) = make_sample_character(&CharacterSpec::default()).unwrap();
    let mut motion = ProceduralMotion { kind: MotionKind::Wave, frames: 90, fps: 25.0, seed: 1 }.generate(&skel).unwrap();
    motion.frames[73].joint_rotations[5].y = f64::NAN;
    match skin_sequence(&mesh, &skel, &motion.frames, Exec::default()) {
        Err(Error::NonFinite(m)) => assert!(m.contains("frame 73"), "{m}"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
    match retarget_sequence(&skel, &motion, &skel, &RetargetConfig::default()) {
        Err(Error::NonFinite(m)) => assert!(m.contains("frame 73"), "{m}"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn cold_and_warm_starts_reach_the_same_minima() {
    let src = CharacterSpec::default().skeleton().unwrap();
    let trgt = CharacterSpec::default().scaled(1.3).skeleton().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut v = |s: f64| Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
    let frames = (0..20)
        .map(|_| Pose {
            root_translation: v(1.0),
            root_rotation: v(1.5),
            joint_rotations: (1..src.joint_count()).map(|_| v(1.0)).collect(),
        })
        .collect();
    let motion = Motion { fps: 25.0, frames };
    let warm_cfg = RetargetConfig::default();
    let cold_cfg = RetargetConfig { init_from_previous: false, ..Default::default() };
    let (_, warm) = retarget_sequence(&src, &motion, &trgt, &warm_cfg).unwrap();
    let (_, cold) = retarget_sequence(&src, &motion, &trgt, &cold_cfg).unwrap();
    for (t, (a, b)) in warm.residuals.iter().zip(&cold.residuals).enumerate() {
        assert!((a - b).abs() < 1e-6, "frame {t}: warm {a:e}, cold {b:e}");
    }
}

#[test]
fn constant_motion_gives_constant_solution() {
    let src = CharacterSpec::default().skeleton().unwrap();
    let trgt = CharacterSpec { arm_length: 0.8, leg_length: 1.05, ..Default::default() }.skeleton().unwrap();
    let pose = ProceduralMotion { kind: MotionKind::Kick, frames: 12, fps: 25.0, seed: 2 }.generate(&src).unwrap().frames[6].clone();
    let motion = Motion { fps: 25.0, frames: vec![pose; 15] };
    let (out, _) = retarget_sequence(&src, &motion, &trgt, &RetargetConfig::default()).unwrap();
    let first = out.frames[0].to_params();
    for f in &out.frames[1..] {
        let d = f.to_params().iter().zip(&first).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-9, "{d:e}");
    }
}
