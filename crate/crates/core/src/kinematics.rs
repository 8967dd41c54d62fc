//! Joint hierarchies, poses, forward kinematics and bone rescaling.
//!
//! Every joint carries a rest offset expressed in its parent's frame. A pose
//! assigns an exponential-map rotation to each joint plus a translation for
//! the root, and the world transform of joint `j` is
//!
//! ```text
//! T_root = Trans(offset_root + root_translation) * Rot(root_rotation)
//! T_j    = T_parent(j) * Trans(offset_j) * Rot(rotation_j)
//! ```
//!
//! Joints are stored in topological order (parent index < child index), so
//! a single forward sweep evaluates the whole hierarchy.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, IsometryMatrix3, Matrix3, Rotation3, Translation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Transform = IsometryMatrix3<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
}

/// A validated joint hierarchy with a designated keypoint subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    keypoint_names: Vec<String>,
    keypoints: Vec<usize>,
    by_name: HashMap<String, usize>,
}

/// On-disk rig description: `{"joints": [...], "keypoints": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigFile {
    pub joints: Vec<Joint>,
    pub keypoints: Vec<String>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, keypoint_names: Vec<String>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        let mut by_name = HashMap::with_capacity(joints.len());
        for (i, joint) in joints.iter().enumerate() {
            if by_name.insert(joint.name.clone(), i).is_some() {
                return Err(Error::InvalidSkeleton(format!(
                    "duplicate joint name `{}`",
                    joint.name
                )));
            }
            if !joint.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("offset of joint `{}`", joint.name)));
            }
            match (i, joint.parent) {
                (0, None) => {}
                (0, Some(_)) => {
                    return Err(Error::InvalidSkeleton(
                        "joint 0 must be the root (parent = none)".into(),
                    ))
                }
                (_, None) => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint `{}` is a second root",
                        joint.name
                    )))
                }
                (_, Some(p)) if p >= i => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint `{}` has parent index {p} >= its own index {i}",
                        joint.name
                    )))
                }
                (_, Some(_)) => {
                    if joint.offset.norm() <= 0.0 {
                        return Err(Error::DegenerateBone(joint.name.clone()));
                    }
                }
            }
        }
        if keypoint_names.is_empty() {
            return Err(Error::InvalidSkeleton("keypoint set is empty".into()));
        }
        let keypoints = keypoint_names
            .iter()
            .map(|n| {
                by_name.get(n).copied().ok_or_else(|| {
                    Error::InvalidSkeleton(format!("keypoint `{n}` is not a joint"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Skeleton {
            joints,
            keypoint_names,
            keypoints,
            by_name,
        })
    }

    pub fn from_rig(rig: RigFile) -> Result<Self> {
        Skeleton::new(rig.joints, rig.keypoints)
    }

    pub fn to_rig(&self) -> RigFile {
        RigFile {
            joints: self.joints.clone(),
            keypoints: self.keypoint_names.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rig: RigFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Skeleton::from_rig(rig)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_rig()).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn keypoint_names(&self) -> &[String] {
        &self.keypoint_names
    }

    /// Joint indices of the keypoints, in keypoint order.
    pub fn keypoint_indices(&self) -> &[usize] {
        &self.keypoints
    }

    /// Length of the bone ending at `joint`; zero for the root.
    pub fn bone_length(&self, joint: usize) -> f64 {
        if joint == 0 {
            0.0
        } else {
            self.joints[joint].offset.norm()
        }
    }

    /// Sum of bone lengths from the root down to `joint`.
    pub fn chain_length(&self, joint: usize) -> f64 {
        let mut total = 0.0;
        let mut j = joint;
        while let Some(p) = self.joints[j].parent {
            total += self.bone_length(j);
            j = p;
        }
        total
    }

    /// Whether `ancestor` lies strictly above `joint` in the hierarchy.
    pub fn is_ancestor(&self, ancestor: usize, joint: usize) -> bool {
        let mut j = joint;
        while let Some(p) = self.joints[j].parent {
            if p == ancestor {
                return true;
            }
            j = p;
        }
        false
    }

    /// Returns a copy with every offset (root included) multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Skeleton> {
        let joints = self
            .joints
            .iter()
            .map(|j| Joint {
                offset: j.offset * factor,
                ..j.clone()
            })
            .collect();
        Skeleton::new(joints, self.keypoint_names.clone())
    }
}

/// Root translation plus one exponential-map rotation per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub root_translation: Vec3,
    pub root_rotation: Vec3,
    /// One entry per non-root joint, in joint order (entry `j - 1` for joint `j`).
    pub joint_rotations: Vec<Vec3>,
}

impl Pose {
    pub fn rest(skel: &Skeleton) -> Pose {
        Pose {
            root_translation: Vec3::zeros(),
            root_rotation: Vec3::zeros(),
            joint_rotations: vec![Vec3::zeros(); skel.joint_count() - 1],
        }
    }

    /// Rotation parameters of joint `j` (the root rotation for `j == 0`).
    pub fn rotation(&self, joint: usize) -> Vec3 {
        if joint == 0 {
            self.root_rotation
        } else {
            self.joint_rotations[joint - 1]
        }
    }

    pub fn set_rotation(&mut self, joint: usize, r: Vec3) {
        if joint == 0 {
            self.root_rotation = r;
        } else {
            self.joint_rotations[joint - 1] = r;
        }
    }

    pub fn param_count(&self) -> usize {
        6 + 3 * self.joint_rotations.len()
    }

    /// Flattens to `[root_t, root_r, r_1, ..., r_{n-1}]`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.root_translation.as_slice());
        out.extend_from_slice(self.root_rotation.as_slice());
        for r in &self.joint_rotations {
            out.extend_from_slice(r.as_slice());
        }
        out
    }

    pub fn from_params(params: &[f64]) -> Result<Pose> {
        if params.len() < 6 || params.len() % 3 != 0 {
            return Err(Error::PoseShape(format!(
                "parameter vector of length {} is not 6 + 3k",
                params.len()
            )));
        }
        let v = |i: usize| Vec3::new(params[i], params[i + 1], params[i + 2]);
        Ok(Pose {
            root_translation: v(0),
            root_rotation: v(3),
            joint_rotations: (6..params.len()).step_by(3).map(v).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }

    pub fn check(&self, skel: &Skeleton) -> Result<()> {
        if self.joint_rotations.len() + 1 != skel.joint_count() {
            return Err(Error::PoseShape(format!(
                "pose has {} joint rotations, skeleton has {} non-root joints",
                self.joint_rotations.len(),
                skel.joint_count() - 1
            )));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("pose parameters".into()));
        }
        Ok(())
    }
}

/// Rotation matrix of an exponential-map vector.
pub fn exp_map(r: &Vec3) -> Rotation3<f64> {
    Rotation3::new(*r)
}

/// World transform of every joint, in joint order.
pub fn fk_transforms(skel: &Skeleton, pose: &Pose) -> Result<Vec<Transform>> {
    pose.check(skel)?;
    Ok(fk_transforms_unchecked(skel, pose))
}

pub(crate) fn fk_transforms_unchecked(skel: &Skeleton, pose: &Pose) -> Vec<Transform> {
    let mut out: Vec<Transform> = Vec::with_capacity(skel.joint_count());
    for (j, joint) in skel.joints.iter().enumerate() {
        let t = match joint.parent {
            None => Transform::from_parts(
                Translation3::from(joint.offset + pose.root_translation),
                exp_map(&pose.root_rotation),
            ),
            Some(p) => {
                out[p]
                    * Transform::from_parts(
                        Translation3::from(joint.offset),
                        exp_map(&pose.joint_rotations[j - 1]),
                    )
            }
        };
        out.push(t);
    }
    out
}

/// World-space keypoint positions, in keypoint order.
pub fn fk_keypoints(skel: &Skeleton, pose: &Pose) -> Result<Vec<Vec3>> {
    let transforms = fk_transforms(skel, pose)?;
    Ok(skel
        .keypoints
        .iter()
        .map(|&k| transforms[k].translation.vector)
        .collect())
}

/// Right Jacobian of SO(3): `Exp(r + d) ~ Exp(r) Exp(J_r(r) d)`.
fn so3_right_jacobian(r: &Vec3) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = r.cross_matrix();
    Matrix3::identity() - k * a + k * k * b
}

/// World positions of `joints` together with the analytic Jacobian of those
/// positions with respect to the flattened pose parameters
/// (see [`Pose::to_params`]). The Jacobian has `3 * joints.len()` rows.
pub fn fk_positions_with_jacobian(
    skel: &Skeleton,
    pose: &Pose,
    joints: &[usize],
) -> Result<(Vec<Vec3>, DMatrix<f64>)> {
    pose.check(skel)?;
    let transforms = fk_transforms_unchecked(skel, pose);
    let n_params = pose.param_count();
    let mut jac = DMatrix::zeros(3 * joints.len(), n_params);
    let mut positions = Vec::with_capacity(joints.len());

    // Per-joint d(R_world * x)/dr factor: -R_world * [x]x * J_r(r), with x in
    // the joint's own frame. Right Jacobians are shared across keypoints.
    let right_jacobians: Vec<Matrix3<f64>> = (0..skel.joint_count())
        .map(|j| so3_right_jacobian(&pose.rotation(j)))
        .collect();

    for (row, &k) in joints.iter().enumerate() {
        let p_k = transforms[k].translation.vector;
        positions.push(p_k);
        let r0 = 3 * row;
        jac.view_mut((r0, 0), (3, 3)).copy_from(&Matrix3::identity());

        let mut a = k;
        while let Some(parent) = skel.joints[a].parent {
            a = parent;
            let world = &transforms[a];
            let rot = world.rotation.matrix();
            let local = rot.transpose() * (p_k - world.translation.vector);
            let block = -(rot * local.cross_matrix() * right_jacobians[a]);
            jac.view_mut((r0, 3 + 3 * a), (3, 3)).copy_from(&block);
        }
    }
    Ok((positions, jac))
}

/// Returns `target` with every bone rescaled to the length of the
/// same-named bone in `source`. Directions, topology and the root offset of
/// `target` are kept.
pub fn rescale_bones(target: &Skeleton, source: &Skeleton) -> Result<Skeleton> {
    if target.joint_count() != source.joint_count() {
        return Err(Error::SkeletonCorrespondence(format!(
            "target has {} joints, source has {}",
            target.joint_count(),
            source.joint_count()
        )));
    }
    let mut joints = target.joints.clone();
    for (j, joint) in joints.iter_mut().enumerate() {
        let s = source.joint_index(&joint.name).ok_or_else(|| {
            Error::SkeletonCorrespondence(format!("joint `{}` missing from source", joint.name))
        })?;
        if j == 0 {
            continue;
        }
        let len = joint.offset.norm();
        if len == 0.0 {
            return Err(Error::DegenerateBone(joint.name.clone()));
        }
        let wanted = source.bone_length(s);
        if wanted != len {
            joint.offset *= wanted / len;
        }
    }
    Skeleton::new(joints, target.keypoint_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn joint(name: &str, parent: Option<usize>, offset: [f64; 3]) -> Joint {
        Joint {
            name: name.into(),
            parent,
            offset: Vec3::from(offset),
        }
    }

    fn planar_chain() -> Skeleton {
        Skeleton::new(
            vec![
                joint("base", None, [0.0, 0.0, 0.0]),
                joint("mid", Some(0), [1.0, 0.0, 0.0]),
                joint("tip", Some(1), [1.0, 0.0, 0.0]),
            ],
            vec!["base".into(), "mid".into(), "tip".into()],
        )
        .unwrap()
    }

    #[test]
    fn identity_pose_sums_offsets() {
        let skel = Skeleton::new(
            vec![
                joint("root", None, [0.5, 1.0, 0.0]),
                joint("a", Some(0), [0.0, 1.0, 0.0]),
                joint("b", Some(1), [0.3, 0.0, 0.2]),
                joint("c", Some(0), [-1.0, 0.0, 0.0]),
            ],
            vec!["b".into(), "c".into()],
        )
        .unwrap();
        let kp = fk_keypoints(&skel, &Pose::rest(&skel)).unwrap();
        assert_relative_eq!(kp[0], Vec3::new(0.8, 2.0, 0.2), epsilon = 1e-15);
        assert_relative_eq!(kp[1], Vec3::new(-0.5, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn planar_elbow_quarter_turn() {
        // Rotating the middle joint by pi/2 about +Z swings the last bone from
        // +X to +Y, so the tip lands at (1, 1, 0).
        let skel = planar_chain();
        let mut pose = Pose::rest(&skel);
        pose.set_rotation(1, Vec3::new(0.0, 0.0, FRAC_PI_2));
        let kp = fk_keypoints(&skel, &pose).unwrap();
        assert_relative_eq!(kp[2], Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn root_translation_shifts_everything() {
        let skel = planar_chain();
        let mut pose = Pose::rest(&skel);
        pose.set_rotation(1, Vec3::new(0.3, -0.2, 0.9));
        let before = fk_keypoints(&skel, &pose).unwrap();
        let t = Vec3::new(0.25, -3.0, 7.5);
        pose.root_translation += t;
        let after = fk_keypoints(&skel, &pose).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_relative_eq!(*a + t, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let skel = planar_chain();
        let mut pose = Pose::rest(&skel);
        pose.joint_rotations.pop();
        assert!(matches!(fk_keypoints(&skel, &pose), Err(Error::PoseShape(_))));
        let mut pose = Pose::rest(&skel);
        pose.root_translation.x = f64::NAN;
        assert!(matches!(fk_keypoints(&skel, &pose), Err(Error::NonFinite(_))));
    }

    #[test]
    fn skeleton_validation() {
        let bad_order = Skeleton::new(
            vec![joint("r", None, [0.0; 3]), joint("a", Some(2), [1.0, 0.0, 0.0]), joint("b", Some(0), [1.0, 0.0, 0.0])],
            vec!["a".into()],
        );
        assert!(matches!(bad_order, Err(Error::InvalidSkeleton(_))));
        let zero_bone = Skeleton::new(
            vec![joint("r", None, [0.0; 3]), joint("a", Some(0), [0.0; 3])],
            vec!["a".into()],
        );
        assert!(matches!(zero_bone, Err(Error::DegenerateBone(_))));
        let unknown_kp = Skeleton::new(vec![joint("r", None, [0.0; 3])], vec!["x".into()]);
        assert!(unknown_kp.is_err());
        let no_kp = Skeleton::new(vec![joint("r", None, [0.0; 3])], vec![]);
        assert!(no_kp.is_err());
    }

    #[test]
    fn rescale_identity_is_exact() {
        let skel = planar_chain();
        assert_eq!(rescale_bones(&skel, &skel).unwrap(), skel);
    }

    #[test]
    fn rescale_keeps_directions() {
        let s2 = 0.5f64.sqrt();
        let target = Skeleton::new(
            vec![
                joint("r", None, [0.1, 0.2, 0.3]),
                joint("a", Some(0), [1.0, 0.0, 0.0]),
                joint("b", Some(1), [0.0, s2, s2]),
                joint("c", Some(0), [0.0, 0.0, -1.0]),
            ],
            vec!["b".into()],
        )
        .unwrap();
        let source = Skeleton::new(
            vec![
                joint("r", None, [9.0, 9.0, 9.0]),
                joint("c", Some(0), [0.0, 3.0, 0.0]),
                joint("a", Some(0), [0.5, 0.0, 0.0]),
                joint("b", Some(2), [0.0, 0.0, 2.0]),
            ],
            vec!["b".into()],
        )
        .unwrap();
        let out = rescale_bones(&target, &source).unwrap();
        assert_eq!(out.joints()[0].offset, target.joints()[0].offset);
        for (name, len) in [("a", 0.5), ("b", 2.0), ("c", 3.0)] {
            let j = out.joint_index(name).unwrap();
            assert_relative_eq!(out.bone_length(j), len, epsilon = 1e-12);
            let dir_out = out.joints()[j].offset.normalize();
            let dir_in = target.joints()[j].offset.normalize();
            assert_relative_eq!(dir_out, dir_in, epsilon = 1e-12);
        }
    }

    #[test]
    fn rescale_count_mismatch() {
        let five = Skeleton::new(
            (0usize..5)
                .map(|i| joint(&format!("j{i}"), i.checked_sub(1), [1.0, 0.0, 0.0]))
                .collect(),
            vec!["j4".into()],
        )
        .unwrap();
        let six = Skeleton::new(
            (0usize..6)
                .map(|i| joint(&format!("j{i}"), i.checked_sub(1), [1.0, 0.0, 0.0]))
                .collect(),
            vec!["j4".into()],
        )
        .unwrap();
        assert!(matches!(
            rescale_bones(&five, &six),
            Err(Error::SkeletonCorrespondence(_))
        ));
    }

    #[test]
    fn rig_json_roundtrip() {
        let skel = planar_chain();
        let text = serde_json::to_string(&skel.to_rig()).unwrap();
        assert!(text.contains("\"parent\":null"));
        let back = Skeleton::from_rig(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, skel);
    }

    #[test]
    fn right_jacobian_small_angle_branch_is_continuous() {
        let r = Vec3::new(1e-6, -2e-6, 0.5e-6);
        let series = so3_right_jacobian(&r);
        let theta2 = r.norm_squared();
        let theta = theta2.sqrt();
        let k = r.cross_matrix();
        let closed = Matrix3::identity() - k * ((1.0 - theta.cos()) / theta2)
            + k * k * ((theta - theta.sin()) / (theta2 * theta));
        assert_relative_eq!(series, closed, epsilon = 1e-6);
    }
}
