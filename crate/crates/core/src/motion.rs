//! Motion sequences: the JSON motion file and a small procedural library
//! (walk, wave, kick, idle) for the sample humanoid.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Pose, Skeleton, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub fps: f64,
    pub frames: Vec<Pose>,
}

/// Plain-array form of a [`Pose`] used in JSON files and responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub root_t: [f64; 3],
    pub root_r: [f64; 3],
    pub rots: Vec<[f64; 3]>,
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        PoseRecord {
            root_t: p.root_translation.into(),
            root_r: p.root_rotation.into(),
            rots: p.joint_rotations.iter().map(|&r| r.into()).collect(),
        }
    }
}

impl From<PoseRecord> for Pose {
    fn from(f: PoseRecord) -> Self {
        Pose {
            root_translation: f.root_t.into(),
            root_rotation: f.root_r.into(),
            joint_rotations: f.rots.into_iter().map(Vec3::from).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MotionRecord {
    fps: f64,
    frames: Vec<PoseRecord>,
}

impl Motion {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Root positions as consumed by the root-offset step (root translation
    /// plus the skeleton's root offset).
    pub fn root_positions(&self, skel: &Skeleton) -> Vec<Vec3> {
        let base = skel.joints()[0].offset;
        self.frames.iter().map(|p| p.root_translation + base).collect()
    }

    /// Shape and finiteness of every frame; errors name the offending frame.
    pub fn check(&self, skel: &Skeleton) -> Result<()> {
        for (t, pose) in self.frames.iter().enumerate() {
            pose.check(skel)
                .map_err(|e| crate::charmesh::annotate_frame(e, t))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let rec = MotionRecord {
            fps: self.fps,
            frames: self.frames.iter().map(PoseRecord::from).collect(),
        };
        serde_json::to_string(&rec).expect("motion serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Motion, serde_json::Error> {
        let rec: MotionRecord = serde_json::from_str(text)?;
        Ok(Motion {
            fps: rec.fps,
            frames: rec.frames.into_iter().map(Pose::from).collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Motion> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Motion::from_json(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Walk,
    Wave,
    Kick,
    Idle,
}

/// Seedable procedural motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralMotion {
    pub kind: MotionKind,
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_fps() -> f64 {
    25.0
}

struct Rig<'a> {
    skel: &'a Skeleton,
    pose: Pose,
}

impl Rig<'_> {
    fn rot(&mut self, joint: &str, r: [f64; 3]) {
        if let Some(j) = self.skel.joint_index(joint) {
            self.pose.set_rotation(j, Vec3::from(r));
        }
    }
}

impl ProceduralMotion {
    /// Generates the motion for any skeleton using the sample humanoid's
    /// joint names; joints the skeleton lacks are left at rest.
    pub fn generate(&self, skel: &Skeleton) -> Result<Motion> {
        if self.frames == 0 {
            return Err(Error::EmptyInput("procedural motion with zero frames".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let amp = rng.random_range(0.8..1.2);
        let freq = rng.random_range(0.8..1.2);
        let phase = rng.random_range(0.0..TAU);
        let heading = rng.random_range(-0.4..0.4);

        let frames = (0..self.frames)
            .map(|t| {
                let time = t as f64 / self.fps;
                let mut rig = Rig {
                    skel,
                    pose: Pose::rest(skel),
                };
                match self.kind {
                    MotionKind::Walk => walk(&mut rig, time, amp, freq, phase, heading),
                    MotionKind::Wave => wave(&mut rig, time, amp, freq, phase),
                    MotionKind::Kick => kick(&mut rig, time, amp, freq, phase),
                    MotionKind::Idle => idle(&mut rig, time, amp, freq, phase),
                }
                rig.pose
            })
            .collect();
        Ok(Motion { fps: self.fps, frames })
    }
}

fn walk(rig: &mut Rig, time: f64, amp: f64, freq: f64, phase: f64, heading: f64) {
    let w = TAU * 0.9 * freq;
    let s = (w * time + phase).sin();
    let c = (w * time + phase).cos();
    let swing = 0.45 * amp;
    // Legs swing about +x: negative angles bring the foot forward (+z).
    rig.rot("l_hip", [-swing * s, 0.0, 0.0]);
    rig.rot("r_hip", [swing * s, 0.0, 0.0]);
    rig.rot("l_knee", [0.5 * amp * (0.5 + 0.5 * c).powi(2), 0.0, 0.0]);
    rig.rot("r_knee", [0.5 * amp * (0.5 - 0.5 * c).powi(2), 0.0, 0.0]);
    rig.rot("l_ankle", [0.15 * s, 0.0, 0.0]);
    rig.rot("r_ankle", [-0.15 * s, 0.0, 0.0]);
    rig.rot("l_shoulder", [0.35 * amp * s, 0.0, 0.08]);
    rig.rot("r_shoulder", [-0.35 * amp * s, 0.0, -0.08]);
    rig.rot("l_elbow", [-0.3 - 0.15 * amp * (s + 1.0), 0.0, 0.0]);
    rig.rot("r_elbow", [-0.3 - 0.15 * amp * (1.0 - s), 0.0, 0.0]);
    rig.rot("spine", [0.03, 0.08 * s, 0.0]);
    rig.rot("neck", [0.0, -0.06 * s, 0.0]);
    let speed = 0.6 * freq;
    let d = speed * time;
    rig.pose.root_rotation = Vec3::new(0.0, heading, 0.0);
    rig.pose.root_translation = Vec3::new(
        d * heading.sin() - 0.3 * heading.sin(),
        -0.025 * (2.0 * (w * time + phase)).cos().abs(),
        d * heading.cos() - 0.3 * heading.cos(),
    );
}

fn wave(rig: &mut Rig, time: f64, amp: f64, freq: f64, phase: f64) {
    let w = TAU * 1.2 * freq;
    let s = (w * time + phase).sin();
    let raise = (time * 2.0).min(1.0);
    // The right arm hangs along -y at -x; negative z-rotation lifts it outwards.
    rig.rot("r_shoulder", [0.0, 0.0, -2.3 * raise]);
    rig.rot("r_elbow", [0.0, 0.0, raise * (-0.6 + 0.45 * amp * s)]);
    rig.rot("r_wrist", [0.0, 0.0, raise * 0.3 * s]);
    rig.rot("l_shoulder", [0.05 * s, 0.0, 0.1]);
    rig.rot("spine", [0.0, 0.0, 0.04 * raise]);
    rig.rot("neck", [0.0, -0.2 * raise, 0.05 * s]);
    rig.pose.root_rotation = Vec3::new(0.0, 0.2 * (0.3 * time).sin(), 0.0);
}

fn kick(rig: &mut Rig, time: f64, amp: f64, freq: f64, phase: f64) {
    let period = 1.6 / freq;
    let u = ((time + phase / TAU * period) % period) / period;
    // Wind up, strike, recover.
    let strike = if u < 0.3 {
        -0.3 * (u / 0.3)
    } else if u < 0.5 {
        -0.3 + 1.6 * ((u - 0.3) / 0.2)
    } else {
        1.3 * (1.0 - (u - 0.5) / 0.5)
    };
    let knee = if u < 0.4 { 1.0 * (u / 0.4) } else { (1.0 - (u - 0.4) / 0.2).max(0.05) };
    rig.rot("r_hip", [-strike * amp, 0.0, 0.0]);
    rig.rot("r_knee", [knee * amp, 0.0, 0.0]);
    rig.rot("l_knee", [0.15, 0.0, 0.0]);
    rig.rot("l_hip", [-0.1, 0.0, 0.0]);
    rig.rot("l_shoulder", [0.0, 0.0, 0.5 + 0.2 * strike]);
    rig.rot("r_shoulder", [0.0, 0.0, -0.5 - 0.2 * strike]);
    rig.rot("spine", [-0.1 * strike, 0.0, 0.0]);
    rig.pose.root_translation = Vec3::new(0.0, -0.03, 0.0);
    rig.pose.root_rotation = Vec3::new(0.0, 0.0, 0.03 * (PI * u).sin());
}

fn idle(rig: &mut Rig, time: f64, amp: f64, freq: f64, phase: f64) {
    let w = TAU * 0.25 * freq;
    let s = (w * time + phase).sin();
    let b = (2.0 * w * time).sin();
    rig.rot("spine", [0.02 * b * amp, 0.05 * s, 0.0]);
    rig.rot("chest", [0.015 * b, 0.0, 0.02 * s]);
    rig.rot("neck", [0.05 * s, 0.1 * (0.7 * w * time).sin(), 0.0]);
    rig.rot("l_shoulder", [0.05 * s, 0.0, 0.12]);
    rig.rot("r_shoulder", [-0.05 * s, 0.0, -0.12]);
    rig.rot("l_elbow", [-0.2, 0.0, 0.0]);
    rig.rot("r_elbow", [-0.2, 0.0, 0.0]);
    rig.pose.root_translation = Vec3::new(0.02 * s, 0.0, 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charmesh::CharacterSpec;

    #[test]
    fn json_roundtrip_is_exact() {
        let skel = CharacterSpec::default().skeleton().unwrap();
        let m = ProceduralMotion { kind: MotionKind::Walk, frames: 12, fps: 30.0, seed: 4 }
            .generate(&skel)
            .unwrap();
        let back = Motion::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        m.check(&skel).unwrap();
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let skel = CharacterSpec::default().skeleton().unwrap();
        for kind in [MotionKind::Walk, MotionKind::Wave, MotionKind::Kick, MotionKind::Idle] {
            let gen = |seed| ProceduralMotion { kind, frames: 20, fps: 25.0, seed }.generate(&skel).unwrap();
            assert_eq!(gen(3), gen(3));
            assert_ne!(gen(3), gen(4));
        }
    }

    #[test]
    fn nan_frame_is_named() {
        let skel = CharacterSpec::default().skeleton().unwrap();
        let mut m = ProceduralMotion { kind: MotionKind::Idle, frames: 5, fps: 25.0, seed: 0 }
            .generate(&skel)
            .unwrap();
        m.frames[3].joint_rotations[2].y = f64::NAN;
        let err = m.check(&skel).unwrap_err();
        assert!(matches!(&err, Error::NonFinite(msg) if msg.contains("frame 3")), "{err}");
    }
}
