use nalgebra::{Matrix3, Matrix4, Rotation3, Vector4};
use proptest::prelude::*;

use reenact_core::charmesh::{make_sample_character, skin, CharacterSpec};
use reenact_core::kinematics::{fk_keypoints, fk_transforms, rescale_bones, Joint, Pose, Skeleton};
use reenact_core::retarget::{retarget_pose, smooth_trajectories, solve_ik, FreeParams, IkTarget, RetargetConfig, Retargeter};
use reenact_core::Vec3;

fn humanoid() -> Skeleton {
    CharacterSpec::default().skeleton().unwrap()
}

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-range..range).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
}

fn pose_strategy(joints: usize, spread: f64) -> impl Strategy<Value = Pose> {
    (vec3(1.0), vec3(spread), prop::collection::vec(vec3(spread), joints - 1)).prop_map(|(t, r, rots)| Pose {
        root_translation: t,
        root_rotation: r,
        joint_rotations: rots,
    })
}

/// Rodrigues' formula, written out.
fn rodrigues(r: &Vec3) -> Matrix3<f64> {
    let theta = r.norm();
    if theta < 1e-12 {
        return Matrix3::identity();
    }
    let k = r / theta;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos())
}

fn homogeneous(rot: Matrix3<f64>, t: Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

/// World matrix of `j` by recursing up the parent chain.
fn naive_world(skel: &Skeleton, pose: &Pose, j: usize) -> Matrix4<f64> {
    let joint = &skel.joints()[j];
    match joint.parent {
        None => homogeneous(rodrigues(&pose.root_rotation), joint.offset + pose.root_translation),
        Some(p) => naive_world(skel, pose, p) * homogeneous(rodrigues(&pose.joint_rotations[j - 1]), joint.offset),
    }
}

fn joint_positions(skel: &Skeleton, pose: &Pose) -> Vec<Vec3> {
    fk_transforms(skel, pose).unwrap().iter().map(|t| t.translation.vector).collect()
}

/// `pose` with the whole body moved by `x -> r x + shift`.
fn rigidly_moved(skel: &Skeleton, pose: &Pose, r: &Rotation3<f64>, shift: &Vec3) -> Pose {
    let root = skel.joints()[0].offset;
    let mut out = pose.clone();
    out.root_rotation = (r * Rotation3::new(pose.root_rotation)).scaled_axis();
    out.root_translation = r * (root + pose.root_translation) + shift - root;
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fk_matches_recursive_matrices(pose in pose_strategy(22, 3.0)) {
        let skel = humanoid();
        prop_assert_eq!(skel.joint_count(), 22);
        let fast = fk_transforms(&skel, &pose).unwrap();
        for (j, t) in fast.iter().enumerate() {
            let m = naive_world(&skel, &pose, j);
            let diff = (t.to_homogeneous() - m).amax();
            prop_assert!(diff < 1e-12, "joint {j}: {diff:e}");
        }
        let kp = fk_keypoints(&skel, &pose).unwrap();
        for (k, &j) in skel.keypoint_indices().iter().enumerate() {
            let m = naive_world(&skel, &pose, j);
            prop_assert!((kp[k] - m.fixed_view::<3, 1>(0, 3).into_owned()).norm() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn global_rotation_rotates_every_joint(pose in pose_strategy(22, 2.0), axis in vec3(3.0)) {
        let skel = humanoid();
        let r = Rotation3::new(axis);
        let root_offset = skel.joints()[0].offset;
        let mut turned = pose.clone();
        turned.root_rotation = (r * Rotation3::new(pose.root_rotation)).scaled_axis();
        turned.root_translation = r * (root_offset + pose.root_translation) - root_offset;
        let a = joint_positions(&skel, &pose);
        let b = joint_positions(&skel, &turned);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((r * p - q).norm() < 1e-9);
        }
    }

    #[test]
    fn rescaling_is_idempotent(scales in prop::collection::vec(0.3f64..3.0, 22), factor in 0.2f64..4.0) {
        let base = humanoid();
        let source = base.scaled(factor).unwrap();
        let joints: Vec<Joint> = base
            .joints()
            .iter()
            .zip(&scales)
            .map(|(j, s)| Joint { offset: j.offset * *s, ..j.clone() })
            .collect();
        let target = Skeleton::new(joints, base.keypoint_names().to_vec()).unwrap();
        let once = rescale_bones(&target, &source).unwrap();
        let twice = rescale_bones(&once, &source).unwrap();
        for j in 1..once.joint_count() {
            prop_assert!((once.bone_length(j) - source.bone_length(j)).abs() < 1e-12);
            prop_assert!((once.joints()[j].offset - twice.joints()[j].offset).norm() < 1e-12);
            if target.bone_length(j) > 1e-9 {
                let cos = once.joints()[j].offset.normalize().dot(&target.joints()[j].offset.normalize());
                prop_assert!(cos > 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn lm_cost_never_increases(goal in pose_strategy(22, 1.2), start in pose_strategy(22, 0.5)) {
        let skel = humanoid();
        let goal_pos = joint_positions(&skel, &goal);
        let targets: Vec<IkTarget> = skel
            .keypoint_indices()
            .iter()
            .map(|&j| IkTarget { joint: j, target: goal_pos[j], weight: 1.0 })
            .collect();
        let sol = solve_ik(&skel, &targets, &start, &RetargetConfig::default(), FreeParams::ALL).unwrap();
        for w in sol.cost_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(sol.residual <= sol.cost_history[0]);
        prop_assert_eq!(sol.residual, *sol.cost_history.last().unwrap());
    }

    #[test]
    fn root_locked_solve_keeps_root(goal in pose_strategy(22, 1.0), start in pose_strategy(22, 0.5)) {
        let skel = humanoid();
        let goal_pos = joint_positions(&skel, &goal);
        let hand = skel.joint_index("l_hand").unwrap();
        let targets = [IkTarget { joint: hand, target: goal_pos[hand], weight: 1.0 }];
        let sol = solve_ik(&skel, &targets, &start, &RetargetConfig::default(), FreeParams::ROOT_LOCKED).unwrap();
        prop_assert_eq!(sol.pose.root_translation, start.root_translation);
        prop_assert_eq!(sol.pose.root_rotation, start.root_rotation);
    }

    #[test]
    fn retarget_solution_follows_rigid_motion(pose in pose_strategy(22, 0.8), axis in vec3(3.0), shift in vec3(2.0)) {
        let src = humanoid();
        let trgt = CharacterSpec { arm_length: 0.8, leg_length: 1.05, torso_length: 0.5, ..Default::default() }.skeleton().unwrap();
        let cfg = RetargetConfig::default();
        let rt = Retargeter::new(&src, &trgt, &cfg).unwrap();
        let moved = rigidly_moved(&src, &pose, &Rotation3::new(axis), &shift);
        let a = retarget_pose(&src, &pose, &trgt, None, &cfg).unwrap();
        let b = retarget_pose(&src, &moved, &trgt, None, &cfg).unwrap();
        prop_assert!((a.residual - b.residual).abs() < 1e-8, "{} vs {}", a.residual, b.residual);
        let ka = rt.solved_keypoints(&a.pose).unwrap();
        let kb = rt.solved_keypoints(&b.pose).unwrap();
        let r = Rotation3::new(axis);
        for (p, q) in ka.iter().zip(&kb) {
            prop_assert!((r * p + shift - q).norm() < 1e-6);
        }
    }

    #[test]
    fn smoothing_commutes_with_offsets(
        traj in prop::collection::vec(prop::collection::vec(vec3(2.0), 4), 1..30),
        offset in vec3(5.0),
        sigma in 0.3f64..4.0,
    ) {
        let shifted: Vec<Vec<Vec3>> = traj.iter().map(|f| f.iter().map(|p| p + offset).collect()).collect();
        let a = smooth_trajectories(&traj, sigma).unwrap();
        let b = smooth_trajectories(&shifted, sigma).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            for (p, q) in fa.iter().zip(fb) {
                prop_assert!((p + offset - q).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn skinning_is_rigidly_equivariant(pose in pose_strategy(22, 1.0), axis in vec3(3.0), shift in vec3(2.0)) {
        let (mesh, skel) = make_sample_character(&CharacterSpec { radial_segments: 6, length_segments: 2, ..Default::default() }).unwrap();
        let r = Rotation3::new(axis);
        let a = skin(&mesh, &skel, &pose).unwrap();
        let b = skin(&mesh, &skel, &rigidly_moved(&skel, &pose, &r, &shift)).unwrap();
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            prop_assert!((r * p + shift - q).norm() < 1e-9);
        }
    }

    #[test]
    fn rigid_root_motion_moves_mesh_rigidly(axis in vec3(3.0), shift in vec3(2.0)) {
        let (mesh, skel) = make_sample_character(&CharacterSpec { radial_segments: 6, length_segments: 2, ..Default::default() }).unwrap();
        let mut pose = Pose::rest(&skel);
        pose.root_rotation = axis;
        pose.root_translation = shift;
        let posed = skin(&mesh, &skel, &pose).unwrap();
        let r = Rotation3::new(axis);
        let root = skel.joints()[0].offset;
        for (v, p) in mesh.vertices.iter().zip(&posed.vertices) {
            let want = r * (v - root) + root + shift;
            prop_assert!((want - p).norm() < 1e-9);
        }
    }
}

#[test]
fn homogeneous_helper_is_affine() {
    let m = homogeneous(rodrigues(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)), Vec3::new(1.0, 2.0, 3.0));
    let p = m * Vector4::new(1.0, 0.0, 0.0, 1.0);
    assert!((p - Vector4::new(1.0, 3.0, 3.0, 1.0)).amax() < 1e-12);
}
