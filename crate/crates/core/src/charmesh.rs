//! Rigged, textured, part-labeled character meshes.
//!
//! Meshes are deformed with linear blend skinning. The procedural sample
//! character is a capsule-limbed humanoid whose triangles carry one of six
//! body-part labels.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{fk_transforms, Joint, Pose, RigFile, Skeleton, Transform, Vec3};
use crate::par::Exec;

pub const MAX_INFLUENCES: usize = 4;
pub const PART_COUNT: usize = 6;

/// Body part label. Discriminants are the on-disk label values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum BodyPart {
    Head = 1,
    Torso = 2,
    LeftArm = 3,
    RightArm = 4,
    LeftLeg = 5,
    RightLeg = 6,
}

impl BodyPart {
    pub const ALL: [BodyPart; PART_COUNT] = [
        BodyPart::Head,
        BodyPart::Torso,
        BodyPart::LeftArm,
        BodyPart::RightArm,
        BodyPart::LeftLeg,
        BodyPart::RightLeg,
    ];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<BodyPart> {
        BodyPart::ALL.get((label as usize).wrapping_sub(1)).copied()
    }
}

pub type Influences = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct RiggedMesh {
    /// Rest-pose positions.
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Texture coordinates in `[0, 1]^2`, `v` growing downwards in the image.
    pub uvs: Vec<[f64; 2]>,
    pub texture: RgbImage,
    pub skin_weights: Vec<Influences>,
    /// One label in `1..=6` per triangle.
    pub part_labels: Vec<u8>,
}

/// World-space vertices of a skinned mesh; topology stays with the [`RiggedMesh`].
#[derive(Debug, Clone, PartialEq)]
pub struct PosedMesh {
    pub vertices: Vec<Vec3>,
}

impl RiggedMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn rest_pose(&self) -> PosedMesh {
        PosedMesh {
            vertices: self.vertices.clone(),
        }
    }

    /// Checks every structural invariant except joint references, which need
    /// a skeleton (see [`RiggedMesh::validate_binding`]).
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.uvs.len() != n || self.skin_weights.len() != n {
            return Err(Error::InvalidMesh(format!(
                "{} vertices but {} uvs and {} weight lists",
                n,
                self.uvs.len(),
                self.skin_weights.len()
            )));
        }
        if self.part_labels.len() != self.triangles.len() {
            return Err(Error::InvalidMesh(format!(
                "{} triangles but {} part labels",
                self.triangles.len(),
                self.part_labels.len()
            )));
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidMesh(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if let Some(l) = self.part_labels.iter().find(|&&l| BodyPart::from_label(l).is_none()) {
            return Err(Error::InvalidMesh(format!("part label {l} outside 1..=6")));
        }
        if !self.vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("mesh vertices".into()));
        }
        if !self.uvs.iter().flatten().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("mesh uvs".into()));
        }
        if self.texture.width() == 0 || self.texture.height() == 0 {
            return Err(Error::InvalidMesh("empty texture".into()));
        }
        for (i, w) in self.skin_weights.iter().enumerate() {
            check_influences(i, w)?;
        }
        Ok(())
    }

    pub fn validate_binding(&self, skel: &Skeleton) -> Result<()> {
        let joints = skel.joint_count();
        for (i, w) in self.skin_weights.iter().enumerate() {
            if let Some((j, _)) = w.iter().find(|(j, _)| *j >= joints) {
                return Err(Error::RigBinding(format!(
                    "vertex {i} references joint {j}, skeleton has {joints}"
                )));
            }
        }
        Ok(())
    }
}

fn check_influences(vertex: usize, w: &Influences) -> Result<()> {
    if w.is_empty() || w.len() > MAX_INFLUENCES {
        return Err(Error::InvalidWeights(format!(
            "vertex {vertex} has {} influences",
            w.len()
        )));
    }
    if w.iter().any(|&(_, x)| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidWeights(format!("vertex {vertex} has a negative weight")));
    }
    let sum: f64 = w.iter().map(|&(_, x)| x).sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidWeights(format!(
            "vertex {vertex} weights sum to {sum}"
        )));
    }
    Ok(())
}

/// Per-joint `T_j(pose) * T_j(rest)^-1`.
pub fn skinning_transforms(skel: &Skeleton, pose: &Pose) -> Result<Vec<Transform>> {
    let rest = fk_transforms(skel, &Pose::rest(skel))?;
    let posed = fk_transforms(skel, pose)?;
    Ok(posed.iter().zip(&rest).map(|(p, r)| p * r.inverse()).collect())
}

/// Linear blend skinning of `mesh` into `pose`.
pub fn skin(mesh: &RiggedMesh, skel: &Skeleton, pose: &Pose) -> Result<PosedMesh> {
    skin_with(mesh, skel, pose, Exec::default())
}

pub fn skin_with(mesh: &RiggedMesh, skel: &Skeleton, pose: &Pose, exec: Exec) -> Result<PosedMesh> {
    mesh.validate_binding(skel)?;
    for (i, w) in mesh.skin_weights.iter().enumerate() {
        check_influences(i, w)?;
    }
    let mats = skinning_transforms(skel, pose)?;
    Ok(PosedMesh {
        vertices: blend(mesh, &mats, exec),
    })
}

fn blend(mesh: &RiggedMesh, mats: &[Transform], exec: Exec) -> Vec<Vec3> {
    exec.map_range(mesh.vertices.len(), |i| {
        let v = nalgebra::Point3::from(mesh.vertices[i]);
        mesh.skin_weights[i]
            .iter()
            .fold(Vec3::zeros(), |acc, &(j, w)| acc + (mats[j] * v).coords * w)
    })
}

/// Skins every frame of a motion. Frames are independent, so `exec` decides
/// whether they run on the rayon pool.
pub fn skin_sequence(
    mesh: &RiggedMesh,
    skel: &Skeleton,
    frames: &[Pose],
    exec: Exec,
) -> Result<Vec<PosedMesh>> {
    mesh.validate_binding(skel)?;
    for (i, w) in mesh.skin_weights.iter().enumerate() {
        check_influences(i, w)?;
    }
    for (t, pose) in frames.iter().enumerate() {
        pose.check(skel)
            .map_err(|e| annotate_frame(e, t))?;
    }
    exec.try_map_range(frames.len(), |t| {
        let mats = skinning_transforms(skel, &frames[t])?;
        Ok(PosedMesh {
            vertices: blend(mesh, &mats, Exec::Sequential),
        })
    })
}

pub(crate) fn annotate_frame(e: Error, frame: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("frame {frame}: {m}")),
        Error::PoseShape(m) => Error::PoseShape(format!("frame {frame}: {m}")),
        other => other,
    }
}

/// Proportions of the procedural humanoid, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CharacterSpec {
    pub torso_length: f64,
    pub neck_length: f64,
    pub head_radius: f64,
    pub shoulder_width: f64,
    pub hip_width: f64,
    /// Upper arm + forearm + hand.
    pub arm_length: f64,
    /// Thigh + shin.
    pub leg_length: f64,
    pub foot_length: f64,
    pub torso_radius: f64,
    pub arm_radius: f64,
    pub leg_radius: f64,
    /// Around-the-limb resolution of every capsule.
    pub radial_segments: usize,
    /// Along-the-limb resolution of every capsule body.
    pub length_segments: usize,
    pub texture_size: u32,
    /// Drives texture colors and pattern only; geometry is seed-independent.
    pub seed: u64,
}

impl Default for CharacterSpec {
    fn default() -> Self {
        CharacterSpec {
            torso_length: 0.55,
            neck_length: 0.12,
            head_radius: 0.11,
            shoulder_width: 0.40,
            hip_width: 0.20,
            arm_length: 0.70,
            leg_length: 0.88,
            foot_length: 0.16,
            torso_radius: 0.15,
            arm_radius: 0.045,
            leg_radius: 0.065,
            radial_segments: 18,
            length_segments: 6,
            texture_size: 256,
            seed: 0,
        }
    }
}

const ANKLE_HEIGHT: f64 = 0.07;
const HIP_DROP: f64 = 0.06;

impl CharacterSpec {
    /// Every length and radius multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> CharacterSpec {
        CharacterSpec {
            torso_length: self.torso_length * factor,
            neck_length: self.neck_length * factor,
            head_radius: self.head_radius * factor,
            shoulder_width: self.shoulder_width * factor,
            hip_width: self.hip_width * factor,
            arm_length: self.arm_length * factor,
            leg_length: self.leg_length * factor,
            foot_length: self.foot_length * factor,
            torso_radius: self.torso_radius * factor,
            arm_radius: self.arm_radius * factor,
            leg_radius: self.leg_radius * factor,
            ..self.clone()
        }
    }

    fn check(&self) -> Result<()> {
        let dims = [
            ("torso_length", self.torso_length),
            ("neck_length", self.neck_length),
            ("head_radius", self.head_radius),
            ("shoulder_width", self.shoulder_width),
            ("hip_width", self.hip_width),
            ("arm_length", self.arm_length),
            ("leg_length", self.leg_length),
            ("foot_length", self.foot_length),
            ("torso_radius", self.torso_radius),
            ("arm_radius", self.arm_radius),
            ("leg_radius", self.leg_radius),
        ];
        for (name, v) in dims {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        if self.radial_segments < 3 || self.length_segments < 1 || self.texture_size < 8 {
            return Err(Error::InvalidSpec("mesh or texture resolution too small".into()));
        }
        Ok(())
    }

    /// Skeleton of the humanoid. Rest pose stands on `y = 0`, faces `+z`,
    /// arms hanging down; the character's left side is `+x`.
    pub fn skeleton(&self) -> Result<Skeleton> {
        self.check()?;
        let upper_arm = 0.46 * self.arm_length;
        let forearm = 0.40 * self.arm_length;
        let hand = 0.14 * self.arm_length;
        let thigh = 0.51 * self.leg_length;
        let shin = 0.49 * self.leg_length;
        let pelvis_height = ANKLE_HEIGHT + self.leg_length + HIP_DROP;
        let spine = 0.45 * self.torso_length;
        let chest = 0.55 * self.torso_length;

        let mut joints: Vec<Joint> = Vec::new();
        let add = |name: &str, parent: Option<&str>, offset: [f64; 3], joints: &mut Vec<Joint>| {
            let parent = parent.map(|p| joints.iter().position(|j| j.name == p).unwrap());
            joints.push(Joint {
                name: name.to_string(),
                parent,
                offset: Vec3::from(offset),
            });
        };
        add("pelvis", None, [0.0, pelvis_height, 0.0], &mut joints);
        add("spine", Some("pelvis"), [0.0, spine, 0.0], &mut joints);
        add("chest", Some("spine"), [0.0, chest, 0.0], &mut joints);
        add("neck", Some("chest"), [0.0, self.neck_length, 0.0], &mut joints);
        add("head", Some("neck"), [0.0, self.head_radius, 0.0], &mut joints);
        add("head_top", Some("head"), [0.0, self.head_radius, 0.0], &mut joints);
        for (side, sx) in [("l", 1.0), ("r", -1.0)] {
            let p = |n: &str| format!("{side}_{n}");
            add(&p("shoulder"), Some("chest"), [sx * self.shoulder_width / 2.0, -0.03, 0.0], &mut joints);
            add(&p("elbow"), Some(&p("shoulder")), [0.0, -upper_arm, 0.0], &mut joints);
            add(&p("wrist"), Some(&p("elbow")), [0.0, -forearm, 0.0], &mut joints);
            add(&p("hand"), Some(&p("wrist")), [0.0, -hand, 0.0], &mut joints);
        }
        for (side, sx) in [("l", 1.0), ("r", -1.0)] {
            let p = |n: &str| format!("{side}_{n}");
            add(&p("hip"), Some("pelvis"), [sx * self.hip_width / 2.0, -HIP_DROP, 0.0], &mut joints);
            add(&p("knee"), Some(&p("hip")), [0.0, -thigh, 0.0], &mut joints);
            add(&p("ankle"), Some(&p("knee")), [0.0, -shin, 0.0], &mut joints);
            add(&p("toe"), Some(&p("ankle")), [0.0, -ANKLE_HEIGHT * 0.6, self.foot_length], &mut joints);
        }
        let keypoints = joints.iter().map(|j| j.name.clone()).collect();
        Skeleton::new(joints, keypoints)
    }
}

struct Segment {
    from: &'static str,
    to: &'static str,
    radius: f64,
    part: BodyPart,
}

fn segments(spec: &CharacterSpec) -> Vec<Segment> {
    let seg = |from, to, radius, part| Segment { from, to, radius, part };
    let (t, a, l) = (spec.torso_radius, spec.arm_radius, spec.leg_radius);
    vec![
        seg("pelvis", "spine", t * 0.95, BodyPart::Torso),
        seg("spine", "chest", t, BodyPart::Torso),
        seg("chest", "neck", t * 0.9, BodyPart::Torso),
        seg("neck", "head", spec.head_radius * 0.4, BodyPart::Head),
        seg("head", "head_top", spec.head_radius, BodyPart::Head),
        seg("chest", "l_shoulder", a * 1.2, BodyPart::Torso),
        seg("l_shoulder", "l_elbow", a, BodyPart::LeftArm),
        seg("l_elbow", "l_wrist", a * 0.85, BodyPart::LeftArm),
        seg("l_wrist", "l_hand", a * 0.7, BodyPart::LeftArm),
        seg("chest", "r_shoulder", a * 1.2, BodyPart::Torso),
        seg("r_shoulder", "r_elbow", a, BodyPart::RightArm),
        seg("r_elbow", "r_wrist", a * 0.85, BodyPart::RightArm),
        seg("r_wrist", "r_hand", a * 0.7, BodyPart::RightArm),
        seg("pelvis", "l_hip", l, BodyPart::Torso),
        seg("l_hip", "l_knee", l, BodyPart::LeftLeg),
        seg("l_knee", "l_ankle", l * 0.8, BodyPart::LeftLeg),
        seg("l_ankle", "l_toe", l * 0.6, BodyPart::LeftLeg),
        seg("pelvis", "r_hip", l, BodyPart::Torso),
        seg("r_hip", "r_knee", l, BodyPart::RightLeg),
        seg("r_knee", "r_ankle", l * 0.8, BodyPart::RightLeg),
        seg("r_ankle", "r_toe", l * 0.6, BodyPart::RightLeg),
    ]
}

/// Atlas tile `(column, row)` of each part in a 3x2 grid.
fn atlas_tile(part: BodyPart) -> (f64, f64) {
    let i = part.label() as usize - 1;
    ((i % 3) as f64, (i / 3) as f64)
}

/// Builds the procedural humanoid and its skeleton.
pub fn make_sample_character(spec: &CharacterSpec) -> Result<(RiggedMesh, Skeleton)> {
    let skel = spec.skeleton()?;
    let rest = fk_transforms(&skel, &Pose::rest(&skel))?;
    let has_children: Vec<bool> = (0..skel.joint_count())
        .map(|j| skel.joints().iter().any(|c| c.parent == Some(j)))
        .collect();

    let mut mesh = RiggedMesh {
        vertices: Vec::new(),
        triangles: Vec::new(),
        uvs: Vec::new(),
        texture: make_texture(spec),
        skin_weights: Vec::new(),
        part_labels: Vec::new(),
    };

    for s in segments(spec) {
        let a = skel.joint_index(s.from).expect("segment joint");
        let b = skel.joint_index(s.to).expect("segment joint");
        let pa = rest[a].translation.vector;
        let pb = rest[b].translation.vector;
        let lower = skel.joints()[a].parent;
        let upper = has_children[b].then_some(b);
        add_capsule(&mut mesh, spec, &s, pa, pb, a, lower, upper);
    }
    mesh.validate()?;
    mesh.validate_binding(&skel)?;
    Ok((mesh, skel))
}

#[allow(clippy::too_many_arguments)]
fn add_capsule(
    mesh: &mut RiggedMesh,
    spec: &CharacterSpec,
    seg: &Segment,
    pa: Vec3,
    pb: Vec3,
    driver: usize,
    lower: Option<usize>,
    upper: Option<usize>,
) {
    let axis = pb - pa;
    let length = axis.norm();
    let dir = axis / length;
    // Any vector not parallel to `dir` seeds the orthonormal frame.
    let seed = if dir.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
    let e1 = dir.cross(&seed).normalize();
    let e2 = dir.cross(&e1);

    let radial = spec.radial_segments;
    let cap_rings = (radial / 4).max(2);
    // Rows from the bottom pole to the top pole: (height along axis, ring radius).
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for i in 0..=cap_rings {
        let phi = -PI / 2.0 + (PI / 2.0) * i as f64 / cap_rings as f64;
        rows.push((seg.radius * phi.sin(), seg.radius * phi.cos()));
    }
    for i in 1..spec.length_segments {
        rows.push((length * i as f64 / spec.length_segments as f64, seg.radius));
    }
    for i in 0..=cap_rings {
        let phi = (PI / 2.0) * i as f64 / cap_rings as f64;
        rows.push((length + seg.radius * phi.sin(), seg.radius * phi.cos()));
    }

    let (tile_u, tile_v) = atlas_tile(seg.part);
    let total = length + 2.0 * seg.radius;
    let base = mesh.vertices.len() as u32;
    let cols = radial + 1;
    for &(h, r) in &rows {
        let s = (h / length).clamp(0.0, 1.0);
        let weights = blend_weights(s, driver, lower, upper);
        let v_local = (h + seg.radius) / total;
        for c in 0..cols {
            let theta = TAU * c as f64 / radial as f64;
            let p = pa + dir * h + (e1 * theta.cos() + e2 * theta.sin()) * r;
            mesh.vertices.push(p);
            let u_local = c as f64 / radial as f64;
            // Inset by half a texel-ish margin so bilinear taps stay in the tile.
            let u = (tile_u + 0.02 + 0.96 * u_local) / 3.0;
            let v = (tile_v + 0.02 + 0.96 * (1.0 - v_local)) / 2.0;
            mesh.uvs.push([u, v]);
            mesh.skin_weights.push(weights.clone());
        }
    }
    let label = seg.part.label();
    for row in 0..rows.len() - 1 {
        let pole_lo = row == 0;
        let pole_hi = row == rows.len() - 2;
        for c in 0..radial {
            let i0 = base + (row * cols + c) as u32;
            let i1 = i0 + 1;
            let i2 = i0 + cols as u32;
            let i3 = i2 + 1;
            if !pole_lo {
                mesh.triangles.push([i0, i1, i3]);
                mesh.part_labels.push(label);
            }
            if !pole_hi {
                mesh.triangles.push([i0, i3, i2]);
                mesh.part_labels.push(label);
            }
        }
    }
}

/// Weights along a segment parameter `s in [0, 1]`: half-and-half with the
/// parent joint at the segment's root, half-and-half with the child joint at
/// its tip, fully rigid in between.
fn blend_weights(s: f64, driver: usize, lower: Option<usize>, upper: Option<usize>) -> Influences {
    const ZONE: f64 = 0.2;
    let mut w = vec![(driver, 1.0)];
    if let Some(p) = lower {
        if s < ZONE {
            let share = 0.5 * (1.0 - s / ZONE);
            w[0].1 -= share;
            w.push((p, share));
        }
    }
    if let Some(c) = upper {
        if s > 1.0 - ZONE {
            let share = 0.5 * (1.0 - (1.0 - s) / ZONE);
            w[0].1 -= share;
            w.push((c, share));
        }
    }
    w.retain(|&(_, x)| x > 0.0);
    w
}

fn make_texture(spec: &CharacterSpec) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base: [[f64; 3]; PART_COUNT] = [
        [0.85, 0.68, 0.55],
        [0.20, 0.35, 0.70],
        [0.75, 0.25, 0.25],
        [0.25, 0.65, 0.30],
        [0.30, 0.30, 0.35],
        [0.70, 0.60, 0.20],
    ];
    let tints: Vec<[f64; 3]> = base
        .iter()
        .map(|c| c.map(|x| (x + rng.random_range(-0.15..0.15)).clamp(0.05, 0.95)))
        .collect();
    let checks = rng.random_range(4..9) as f64;
    let contrast = rng.random_range(0.15..0.35);

    let size = spec.texture_size;
    let (w, h) = (size * 3 / 2, size);
    RgbImage::from_fn(w, h, |x, y| {
        let u = (x as f64 + 0.5) / w as f64 * 3.0;
        let v = (y as f64 + 0.5) / h as f64 * 2.0;
        let part = (v.floor() as usize).min(1) * 3 + (u.floor() as usize).min(2);
        let (fu, fv) = (u.fract(), v.fract());
        let odd = ((fu * checks).floor() as i64 + (fv * checks).floor() as i64) % 2 == 1;
        let shade = if odd { 1.0 - contrast } else { 1.0 };
        let c = tints[part].map(|x| (x * shade * 255.0).round() as u8);
        Rgb(c)
    })
}

/// Sidecar JSON stored next to `character.obj`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigSidecar {
    pub skeleton: RigFile,
    pub weights: Vec<Vec<(usize, f64)>>,
    pub part_labels: Vec<u8>,
    pub keypoints: Vec<String>,
    /// Texture PNG, relative to the sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
}

/// Path of the rig sidecar belonging to an OBJ: `x.obj` -> `x.rig.json`.
pub fn sidecar_path(obj: &Path) -> PathBuf {
    obj.with_extension("rig.json")
}

/// Writes `obj`, its `.rig.json` sidecar and a `.png` texture next to it.
pub fn save_character(mesh: &RiggedMesh, skel: &Skeleton, obj: &Path) -> Result<()> {
    let mut text = String::with_capacity(mesh.vertices.len() * 64);
    text.push_str("# rigged character\n");
    for v in &mesh.vertices {
        let _ = writeln!(text, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for uv in &mesh.uvs {
        let _ = writeln!(text, "vt {:?} {:?}", uv[0], 1.0 - uv[1]);
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(text, "f {a}/{a} {b}/{b} {c}/{c}");
    }
    std::fs::write(obj, text).map_err(|e| Error::io(obj, e))?;

    let tex_path = obj.with_extension("png");
    mesh.texture.save(&tex_path).map_err(|e| Error::Image {
        path: tex_path.clone(),
        source: e,
    })?;
    let sidecar = RigSidecar {
        skeleton: skel.to_rig(),
        weights: mesh.skin_weights.clone(),
        part_labels: mesh.part_labels.clone(),
        keypoints: skel.keypoint_names().to_vec(),
        texture: tex_path.file_name().map(|n| n.to_string_lossy().into_owned()),
    };
    let side = sidecar_path(obj);
    let json = serde_json::to_string(&sidecar).map_err(|e| Error::json(&side, e))?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Loads an OBJ (positions, uvs, triangles with `v/vt` refs sharing indices)
/// together with its rig sidecar.
pub fn load_character(obj: &Path) -> Result<(RiggedMesh, Skeleton)> {
    let text = std::fs::read_to_string(obj).map_err(|e| Error::Asset(format!("{}: {e}", obj.display())))?;
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    let bad = |line: usize, what: &str| Error::Format(format!("{}:{}: {what}", obj.display(), line + 1));
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad(ln, "bad vertex"))?;
                if c.len() < 3 {
                    return Err(bad(ln, "vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("vt") => {
                let c: Vec<f64> = it.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad(ln, "bad uv"))?;
                if c.len() < 2 {
                    return Err(bad(ln, "uv needs 2 coordinates"));
                }
                uvs.push([c[0], 1.0 - c[1]]);
            }
            Some("f") => {
                let refs: Vec<&str> = it.collect();
                if refs.len() != 3 {
                    return Err(bad(ln, "only triangles are supported"));
                }
                let mut tri = [0u32; 3];
                for (k, r) in refs.iter().enumerate() {
                    let mut parts = r.split('/');
                    let vi: u32 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(ln, "bad face"))?;
                    if let Some(ti) = parts.next().filter(|s| !s.is_empty()) {
                        if ti.parse::<u32>().ok() != Some(vi) {
                            return Err(bad(ln, "uv index must equal vertex index"));
                        }
                    }
                    if vi == 0 {
                        return Err(bad(ln, "indices are 1-based"));
                    }
                    tri[k] = vi - 1;
                }
                triangles.push(tri);
            }
            _ => {}
        }
    }

    let side = sidecar_path(obj);
    let side_text = std::fs::read_to_string(&side).map_err(|e| Error::Asset(format!("{}: {e}", side.display())))?;
    let sidecar: RigSidecar = serde_json::from_str(&side_text).map_err(|e| Error::json(&side, e))?;
    let mut rig = sidecar.skeleton;
    if !sidecar.keypoints.is_empty() {
        rig.keypoints = sidecar.keypoints;
    }
    let skel = Skeleton::from_rig(rig)?;

    let texture = match &sidecar.texture {
        Some(name) => {
            let p = side.parent().unwrap_or(Path::new(".")).join(name);
            image::open(&p)
                .map_err(|e| Error::Asset(format!("texture {}: {e}", p.display())))?
                .to_rgb8()
        }
        None => RgbImage::from_pixel(1, 1, Rgb([200, 200, 200])),
    };
    let mesh = RiggedMesh {
        vertices,
        triangles,
        uvs,
        texture,
        skin_weights: sidecar.weights,
        part_labels: sidecar.part_labels,
    };
    mesh.validate()?;
    mesh.validate_binding(&skel)?;
    Ok((mesh, skel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    fn single_joint() -> (RiggedMesh, Skeleton) {
        let skel = Skeleton::new(
            vec![Joint {
                name: "root".into(),
                parent: None,
                offset: Vec3::new(0.5, 0.0, 0.0),
            }],
            vec!["root".into()],
        )
        .unwrap();
        let vertices = vec![
            Vec3::new(1.5, 0.0, 0.0),
            Vec3::new(0.5, 1.0, 0.0),
            Vec3::new(0.5, 0.0, -2.0),
        ];
        let mesh = RiggedMesh {
            uvs: vec![[0.0, 0.0]; 3],
            skin_weights: vec![vec![(0, 1.0)]; 3],
            triangles: vec![[0, 1, 2]],
            part_labels: vec![2],
            texture: RgbImage::new(2, 2),
            vertices,
        };
        (mesh, skel)
    }

    #[test]
    fn rest_pose_is_identity() {
        let (mesh, skel) = make_sample_character(&CharacterSpec::default()).unwrap();
        let posed = skin(&mesh, &skel, &Pose::rest(&skel)).unwrap();
        for (a, b) in posed.vertices.iter().zip(&mesh.vertices) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_joint_rotation_is_rigid_about_joint() {
        let (mesh, skel) = single_joint();
        let r = Vec3::new(0.2, -1.1, 0.4);
        let mut pose = Pose::rest(&skel);
        pose.root_rotation = r;
        let posed = skin(&mesh, &skel, &pose).unwrap();
        let rot = Rotation3::new(r);
        let origin = Vec3::new(0.5, 0.0, 0.0);
        for (p, v) in posed.vertices.iter().zip(&mesh.vertices) {
            assert_relative_eq!(*p, origin + rot * (v - origin), epsilon = 1e-12);
        }
    }

    #[test]
    fn half_half_vertex_lands_at_midpoint() {
        // Two joints translated apart: root by +X via root translation, child
        // rotated so its rigid image of the vertex differs. The blend is the
        // average of the two rigid images computed by hand.
        let skel = Skeleton::new(
            vec![
                Joint { name: "a".into(), parent: None, offset: Vec3::zeros() },
                Joint { name: "b".into(), parent: Some(0), offset: Vec3::new(0.0, 1.0, 0.0) },
            ],
            vec!["b".into()],
        )
        .unwrap();
        let mesh = RiggedMesh {
            vertices: vec![Vec3::new(1.0, 1.0, 0.0)],
            uvs: vec![[0.5, 0.5]],
            skin_weights: vec![vec![(0, 0.5), (1, 0.5)]],
            triangles: vec![],
            part_labels: vec![],
            texture: RgbImage::new(1, 1),
        };
        let mut pose = Pose::rest(&skel);
        pose.root_translation = Vec3::new(2.0, 0.0, 0.0);
        pose.set_rotation(1, Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        // Joint a image: (1,1,0) + (2,0,0) = (3,1,0).
        // Joint b sits at (2,1,0); the vertex is (1,0,0) from b, rotated 90 deg
        // about z becomes (0,1,0), giving (2,2,0). Midpoint: (2.5,1.5,0).
        let posed = skin(&mesh, &skel, &pose).unwrap();
        assert_relative_eq!(posed.vertices[0], Vec3::new(2.5, 1.5, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn binding_and_weight_errors() {
        let (mut mesh, skel) = single_joint();
        mesh.skin_weights[1] = vec![(3, 1.0)];
        assert!(matches!(skin(&mesh, &skel, &Pose::rest(&skel)), Err(Error::RigBinding(_))));
        let (mut mesh, skel) = single_joint();
        mesh.skin_weights[1] = vec![(0, 0.7)];
        assert!(matches!(skin(&mesh, &skel, &Pose::rest(&skel)), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn sample_character_contract() {
        let (mesh, skel) = make_sample_character(&CharacterSpec::default()).unwrap();
        mesh.validate().unwrap();
        assert!((5_000..=15_000).contains(&mesh.triangle_count()), "{}", mesh.triangle_count());
        let labels: std::collections::BTreeSet<u8> = mesh.part_labels.iter().copied().collect();
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
        assert!(mesh.skin_weights.iter().all(|w| w.len() <= MAX_INFLUENCES));
        // Feet rest on the ground.
        let min_y = mesh.vertices.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
        assert!(min_y > -0.05 && min_y < 0.05, "{min_y}");
        assert_eq!(skel.joint_count(), 22);
    }

    #[test]
    fn doubled_arms_double_arm_bones() {
        let base = CharacterSpec::default();
        let long = CharacterSpec {
            arm_length: base.arm_length * 2.0,
            ..base.clone()
        };
        let a = base.skeleton().unwrap();
        let b = long.skeleton().unwrap();
        for name in ["l_elbow", "l_wrist", "l_hand", "r_elbow", "r_wrist", "r_hand"] {
            let ja = a.joint_index(name).unwrap();
            assert_relative_eq!(b.bone_length(ja), 2.0 * a.bone_length(ja), epsilon = 1e-12);
        }
        let knee = a.joint_index("l_knee").unwrap();
        assert_eq!(a.bone_length(knee), b.bone_length(knee));
    }

    #[test]
    fn seeds_change_texture_only() {
        let a = make_sample_character(&CharacterSpec { seed: 1, ..Default::default() }).unwrap().0;
        let b = make_sample_character(&CharacterSpec { seed: 2, ..Default::default() }).unwrap().0;
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.triangles, b.triangles);
        assert_ne!(a.texture, b.texture);
    }

    #[test]
    fn nonpositive_spec_rejected() {
        let spec = CharacterSpec { leg_length: 0.0, ..Default::default() };
        assert!(matches!(make_sample_character(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn obj_roundtrip() {
        let spec = CharacterSpec { radial_segments: 6, length_segments: 2, texture_size: 16, ..Default::default() };
        let (mesh, skel) = make_sample_character(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let obj = dir.path().join("character.obj");
        save_character(&mesh, &skel, &obj).unwrap();
        assert!(dir.path().join("character.rig.json").exists());
        let (back, skel2) = load_character(&obj).unwrap();
        assert_eq!(skel2, skel);
        assert_eq!(back.triangles, mesh.triangles);
        assert_eq!(back.part_labels, mesh.part_labels);
        assert_eq!(back.texture, mesh.texture);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert_eq!(a, b);
        }
        assert!(matches!(load_character(&dir.path().join("nope.obj")), Err(Error::Asset(_))));
    }
}
