//! Dataset assembly and reenactment.
//!
//! A dataset directory holds:
//!
//! ```text
//! manifest.json
//! camera.json
//! character/character.obj (+ .rig.json, texture png)
//! stacks/000000.nrcs ...      conditioning stacks
//! targets/000000.png ...      lit ground-truth frames
//! masks/000000.png ...        foreground coverage (0 or 255)
//! ```
//!
//! Every path in the manifest is relative to the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::charmesh::{load_character, make_sample_character, save_character, skin_sequence, CharacterSpec, PosedMesh, RiggedMesh};
use crate::conditioning::{compose, read_stack, write_contact_sheet, ConditioningInput, ConditioningMode, ConditioningStack};
use crate::error::{Error, Result};
use crate::kinematics::{fk_transforms, Pose, Skeleton, Vec3};
use crate::motion::{Motion, ProceduralMotion};
use crate::par::Exec;
use crate::planes::Planes;
use crate::raster::{
    ground_shadow, render, render_background, render_skeleton_points, BackgroundSpec, Camera, RenderOptions, RenderOutput,
    Shading, SkeletonStyle,
};
use crate::retarget::{apply_root_offset, retarget_sequence, smooth_trajectories_with, RetargetConfig, RetargetReport};

/// Frames skinned and smoothed together; smoothing windows overlap chunk
/// borders so the result does not depend on the chunk size.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharacterSource {
    Procedural(CharacterSpec),
    /// OBJ with its `.rig.json` sidecar.
    Obj(PathBuf),
}

impl Default for CharacterSource {
    fn default() -> Self {
        CharacterSource::Procedural(CharacterSpec::default())
    }
}

impl CharacterSource {
    pub fn load(&self) -> Result<(RiggedMesh, Skeleton)> {
        match self {
            CharacterSource::Procedural(spec) => make_sample_character(spec),
            CharacterSource::Obj(path) => load_character(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionSource {
    Procedural(ProceduralMotion),
    File(PathBuf),
}

impl MotionSource {
    pub fn load(&self, skel: &Skeleton) -> Result<Motion> {
        match self {
            MotionSource::Procedural(p) => p.generate(skel),
            MotionSource::File(path) => Motion::load(path),
        }
    }
}

/// Everything that determines how a pose becomes a stack and a target image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Square output size in pixels.
    pub resolution: u32,
    pub mode: ConditioningMode,
    /// Camera JSON; a default full-body camera is used when absent.
    pub camera: Option<PathBuf>,
    pub background: BackgroundSpec,
    /// Temporal smoothing of skinned vertices (or joints in skeleton mode),
    /// in frames. `None` disables it.
    pub smoothing_sigma: Option<f64>,
    /// Direction towards the light for the ground-truth pass.
    pub light: [f64; 3],
    pub ambient: f64,
    /// Multiplier applied to background pixels in shadow, in `[0, 1]`.
    pub shadow_strength: f64,
    /// Also write a per-channel contact sheet next to each stack.
    pub preview: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            resolution: 64,
            mode: ConditioningMode::RgbdParts,
            camera: None,
            background: BackgroundSpec::default(),
            smoothing_sigma: Some(1.0),
            light: [0.4, 0.8, 0.6],
            ambient: 0.35,
            shadow_strength: 0.45,
            preview: false,
        }
    }
}

impl RenderSettings {
    pub fn check(&self) -> Result<()> {
        if self.resolution < 8 || self.resolution > 4096 {
            return Err(Error::Config(format!("resolution {} outside 8..=4096", self.resolution)));
        }
        if let Some(s) = self.smoothing_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("smoothing sigma must be positive, got {s}")));
            }
        }
        if !(0.0..=1.0).contains(&self.ambient) || !(0.0..=1.0).contains(&self.shadow_strength) {
            return Err(Error::Config("ambient and shadow_strength must lie in [0, 1]".into()));
        }
        let l = Vec3::from(self.light);
        if !(l.norm() > 0.0) || l.y <= 0.0 {
            return Err(Error::Config("light must point upwards (positive y)".into()));
        }
        Ok(())
    }

    /// Loads and validates the camera, resampled to the output resolution.
    pub fn camera(&self) -> Result<Camera> {
        let cam = match &self.camera {
            None => Camera::default_for_resolution(self.resolution),
            Some(path) => Camera::load(path)?,
        };
        if cam.width == self.resolution && cam.height == self.resolution {
            return Ok(cam);
        }
        if cam.width != cam.height {
            return Err(Error::Camera(format!(
                "camera is {}x{}; only square cameras can be resampled to {}x{}",
                cam.width, cam.height, self.resolution, self.resolution
            )));
        }
        let cam = cam.with_resolution(self.resolution, self.resolution);
        cam.validate()?;
        Ok(cam)
    }
}

/// A character, camera and background ready to render frames.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: RiggedMesh,
    pub skel: Skeleton,
    pub cam: Camera,
    pub background: Planes,
    pub settings: RenderSettings,
}

/// Outputs of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub stack: ConditioningStack,
    pub target: Planes,
    pub coverage: Vec<bool>,
}

impl Scene {
    pub fn new(mesh: RiggedMesh, skel: Skeleton, settings: RenderSettings) -> Result<Scene> {
        settings.check()?;
        let cam = settings.camera()?;
        Scene::with_camera(mesh, skel, settings, cam)
    }

    /// Uses `cam` as given instead of `settings.camera`; its size becomes the
    /// output resolution, so it must be square.
    pub fn with_camera(mesh: RiggedMesh, skel: Skeleton, mut settings: RenderSettings, cam: Camera) -> Result<Scene> {
        cam.validate()?;
        if cam.width != cam.height {
            return Err(Error::Camera(format!("camera must be square, is {}x{}", cam.width, cam.height)));
        }
        settings.resolution = cam.width;
        settings.camera = None;
        settings.check()?;
        mesh.validate_binding(&skel)?;
        let background = render_background(&settings.background, &cam)?;
        Ok(Scene { mesh, skel, cam, background, settings })
    }

    pub fn render_conditioning(&self, posed: &PosedMesh) -> Result<RenderOutput> {
        render(&self.mesh, posed, &self.cam, &RenderOptions::default())
    }

    /// Diffuse-lit render over the background with the ground shadow.
    pub fn render_lit(&self, posed: &PosedMesh) -> Result<(Planes, Vec<bool>)> {
        let s = &self.settings;
        let opts = RenderOptions {
            shading: Shading::Diffuse { to_light: s.light, ambient: s.ambient },
            background_fill: [0.0; 3],
        };
        let out = render(&self.mesh, posed, &self.cam, &opts)?;
        let mut bg = self.background.clone();
        if s.shadow_strength > 0.0 {
            let shadow = ground_shadow(&self.mesh, posed, &self.cam, Vec3::from(s.light), 0.0)?;
            let k = (1.0 - s.shadow_strength) as f32;
            let n = bg.pixel_count();
            for (i, _) in shadow.iter().enumerate().filter(|(_, &sh)| sh) {
                for c in 0..3 {
                    let v = &mut bg.data[c * n + i];
                    *v = (*v + 1.0) * k - 1.0;
                }
            }
        }
        let coverage = out.coverage();
        Ok((out.composite_over(&bg)?, coverage))
    }

    /// Stack and target for one frame. `joints` are the world-space joint
    /// positions used for the skeleton mode.
    pub fn frame(&self, posed: &PosedMesh, joints: &[Vec3]) -> Result<FrameOutput> {
        let mode = self.settings.mode;
        let stack = if mode.uses_mesh() {
            let out = self.render_conditioning(posed)?;
            compose(ConditioningInput::Mesh(&out), &self.background, mode)?
        } else {
            let s = render_skeleton_points(&self.skel, joints, &self.cam, &SkeletonStyle::default())?;
            compose(ConditioningInput::Skeleton(&s), &self.background, mode)?
        };
        let (target, coverage) = self.render_lit(posed)?;
        Ok(FrameOutput { stack, target, coverage })
    }

    /// Skins (and optionally smooths) `frames[range]`, returning posed meshes
    /// and joint positions for exactly that range.
    fn pose_range(&self, frames: &[Pose], lo: usize, hi: usize, exec: Exec) -> Result<(Vec<PosedMesh>, Vec<Vec<Vec3>>)> {
        let radius = self
            .settings
            .smoothing_sigma
            .map(|s| (3.0 * s).ceil() as usize)
            .unwrap_or(0);
        let a = lo.saturating_sub(radius);
        let b = (hi + radius).min(frames.len());
        let window = &frames[a..b];
        let mut posed = skin_sequence(&self.mesh, &self.skel, window, exec)
            .map_err(|e| shift_frame(e, a))?;
        let mut joints: Vec<Vec<Vec3>> = exec
            .try_map_range(window.len(), |t| {
                Ok::<_, Error>(fk_transforms(&self.skel, &window[t])?.iter().map(|m| m.translation.vector).collect())
            })?;
        if let Some(sigma) = self.settings.smoothing_sigma {
            // The window reaches `radius` frames past both ends of the range
            // (or the sequence end), so kept frames see exactly the taps they
            // would see in the whole sequence.
            let verts: Vec<Vec<Vec3>> = posed.into_iter().map(|p| p.vertices).collect();
            posed = smooth_trajectories_with(&verts, sigma, exec)?
                .into_iter()
                .map(|vertices| PosedMesh { vertices })
                .collect();
            joints = smooth_trajectories_with(&joints, sigma, exec)?;
        }
        let skip = lo - a;
        Ok((
            posed.into_iter().skip(skip).take(hi - lo).collect(),
            joints.into_iter().skip(skip).take(hi - lo).collect(),
        ))
    }
}

fn shift_frame(e: Error, offset: usize) -> Error {
    if offset == 0 {
        return e;
    }
    let fix = |m: String| match m.strip_prefix("frame ").and_then(|r| r.split_once(':')) {
        Some((n, rest)) => match n.parse::<usize>() {
            Ok(n) => format!("frame {}:{rest}", n + offset),
            Err(_) => m,
        },
        None => m,
    };
    match e {
        Error::NonFinite(m) => Error::NonFinite(fix(m)),
        Error::PoseShape(m) => Error::PoseShape(fix(m)),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    /// Reenactment output: inputs for inference, no paired ground truth.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_index: usize,
    pub stack_path: PathBuf,
    pub target_path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub resolution: u32,
    pub mode: ConditioningMode,
    pub camera: PathBuf,
    pub character: PathBuf,
    pub fps: f64,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        write_atomic(path, text.as_bytes())
    }

    /// Checks the manifest against the files under `root`: every referenced
    /// file exists, frame indices are unique, and every stack parses with
    /// the manifest's mode and resolution.
    pub fn validate(&self, root: &Path) -> Result<()> {
        for p in [&self.camera, &self.character] {
            if !root.join(p).is_file() {
                return Err(Error::Format(format!("missing {}", p.display())));
            }
        }
        let mut seen = HashSet::new();
        for f in &self.frames {
            let i = f.frame_index;
            if !seen.insert(i) {
                return Err(Error::Format(format!("frame {i}: duplicate frame index")));
            }
            let stack = read_stack(&root.join(&f.stack_path)).map_err(|e| frame_format(i, e))?;
            if stack.mode != self.mode {
                return Err(Error::Format(format!("frame {i}: stack mode {} != {}", stack.mode, self.mode)));
            }
            let r = self.resolution as usize;
            if stack.width() != r || stack.height() != r {
                return Err(Error::Format(format!(
                    "frame {i}: stack is {}x{}, manifest resolution is {r}",
                    stack.width(),
                    stack.height()
                )));
            }
            for p in [&f.target_path, &f.mask_path] {
                if !root.join(p).is_file() {
                    return Err(Error::Format(format!("frame {i}: missing {}", p.display())));
                }
            }
        }
        Ok(())
    }
}

fn frame_format(i: usize, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("frame {i}: {m}")),
        Error::Io { path, source } => Error::Format(format!("frame {i}: {}: {source}", path.display())),
        other => other,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode_png(img: image::DynamicImage, path: &Path) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(buf.into_inner())
}

/// Output directory layout and frame naming.
struct Layout {
    root: PathBuf,
}

impl Layout {
    fn rel(&self, dir: &str, frame: usize, ext: &str) -> PathBuf {
        PathBuf::from(dir).join(format!("{frame:06}.{ext}"))
    }

    fn entry(&self, frame: usize, split: Split) -> FrameEntry {
        FrameEntry {
            frame_index: frame,
            stack_path: self.rel("stacks", frame, "nrcs"),
            target_path: self.rel("targets", frame, "png"),
            mask_path: self.rel("masks", frame, "png"),
            split,
        }
    }

    fn create(&self) -> Result<()> {
        for d in ["stacks", "targets", "masks", "character"] {
            let p = self.root.join(d);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// A frame is complete when all three files exist and the stack parses
    /// with the expected mode and size.
    fn is_complete(&self, e: &FrameEntry, mode: ConditioningMode, res: usize) -> bool {
        let ok = |p: &Path| self.root.join(p).is_file();
        ok(&e.target_path)
            && ok(&e.mask_path)
            && read_stack(&self.root.join(&e.stack_path))
                .map(|s| s.mode == mode && s.width() == res && s.height() == res)
                .unwrap_or(false)
    }

    fn write_frame(&self, e: &FrameEntry, out: &FrameOutput, preview: bool) -> Result<()> {
        let stack_path = self.root.join(&e.stack_path);
        out.stack.validate()?;
        write_atomic(&stack_path, &out.stack.to_bytes())?;
        if preview {
            write_contact_sheet(&out.stack, &stack_path.with_extension("sheet.png"))?;
        }
        let target = self.root.join(&e.target_path);
        write_atomic(&target, &encode_png(out.target.to_rgb8(0).into(), &target)?)?;
        let (w, h) = (out.stack.width() as u32, out.stack.height() as u32);
        let mask = GrayImage::from_fn(w, h, |x, y| Luma([if out.coverage[(y * w + x) as usize] { 255 } else { 0 }]));
        let mask_path = self.root.join(&e.mask_path);
        write_atomic(&mask_path, &encode_png(mask.into(), &mask_path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub character: CharacterSource,
    pub motion: MotionSource,
    pub render: RenderSettings,
    /// Trailing fraction of frames tagged `val`.
    pub val_fraction: f64,
    pub out_dir: PathBuf,
    /// Keep frames already written by an interrupted run.
    pub resume: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            character: CharacterSource::default(),
            motion: MotionSource::Procedural(ProceduralMotion {
                kind: crate::motion::MotionKind::Walk,
                frames: 200,
                fps: 25.0,
                seed: 0,
            }),
            render: RenderSettings::default(),
            val_fraction: 0.1,
            out_dir: PathBuf::from("dataset"),
            resume: false,
        }
    }
}

/// Renders `motion` for `scene` into `out_dir`, writing the manifest last.
fn render_motion(
    scene: &Scene,
    motion: &Motion,
    out_dir: &Path,
    splits: &dyn Fn(usize) -> Split,
    resume: bool,
    exec: Exec,
) -> Result<DatasetManifest> {
    if motion.is_empty() {
        return Err(Error::EmptyInput("motion has no frames".into()));
    }
    motion.check(&scene.skel)?;
    let layout = Layout { root: out_dir.to_path_buf() };
    layout.create()?;
    scene.cam.save(&out_dir.join("camera.json"))?;
    let character = PathBuf::from("character").join("character.obj");
    save_character(&scene.mesh, &scene.skel, &out_dir.join(&character))?;

    let res = scene.settings.resolution as usize;
    let entries: Vec<FrameEntry> = (0..motion.len()).map(|t| layout.entry(t, splits(t))).collect();
    let mut done = 0usize;
    for lo in (0..motion.len()).step_by(CHUNK) {
        let hi = (lo + CHUNK).min(motion.len());
        let todo: Vec<usize> = (lo..hi)
            .filter(|&t| !(resume && layout.is_complete(&entries[t], scene.settings.mode, res)))
            .collect();
        if todo.is_empty() {
            continue;
        }
        let (posed, joints) = scene.pose_range(&motion.frames, lo, hi, exec)?;
        exec.try_map_range(todo.len(), |k| {
            let t = todo[k];
            let out = scene.frame(&posed[t - lo], &joints[t - lo])?;
            layout.write_frame(&entries[t], &out, scene.settings.preview)
        })?;
        done += todo.len();
        log::info!("frames {lo}..{hi}: wrote {}", todo.len());
    }
    log::info!("{done} of {} frames rendered", motion.len());

    let manifest = DatasetManifest {
        resolution: scene.settings.resolution,
        mode: scene.settings.mode,
        camera: PathBuf::from("camera.json"),
        character,
        fps: motion.fps,
        frames: entries,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Builds a paired training corpus: conditioning stacks from unlit renders
/// and lit, shadowed ground-truth frames.
pub fn build_dataset(cfg: &DatasetConfig, exec: Exec) -> Result<DatasetManifest> {
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", cfg.val_fraction)));
    }
    // Validation before anything touches the output directory.
    cfg.render.check()?;
    cfg.render.camera()?;
    let (mesh, skel) = cfg.character.load()?;
    let motion = cfg.motion.load(&skel)?;
    motion.check(&skel)?;
    let scene = Scene::new(mesh, skel, cfg.render.clone())?;
    let n = motion.len();
    let n_train = ((1.0 - cfg.val_fraction) * n as f64).round() as usize;
    let split = move |t: usize| if t < n_train { Split::Train } else { Split::Val };
    render_motion(&scene, &motion, &cfg.out_dir, &split, cfg.resume, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReenactConfig {
    /// Character whose skeleton the source motion drives.
    pub source: CharacterSource,
    pub source_motion: MotionSource,
    pub target: CharacterSource,
    /// The target's training motion; its mean root position is where the
    /// reenacted motion is moved to. Without it no root offset is applied.
    pub target_motion: Option<MotionSource>,
    pub retarget: RetargetConfig,
    pub render: RenderSettings,
    pub out_dir: PathBuf,
    pub resume: bool,
}

impl Default for ReenactConfig {
    fn default() -> Self {
        let dataset = DatasetConfig::default();
        ReenactConfig {
            source: CharacterSource::default(),
            source_motion: dataset.motion,
            target: CharacterSource::default(),
            target_motion: None,
            retarget: RetargetConfig::default(),
            render: RenderSettings::default(),
            out_dir: PathBuf::from("reenact"),
            resume: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReenactOutput {
    pub manifest: DatasetManifest,
    pub motion: Motion,
    pub report: RetargetReport,
}

/// Transfers the source motion onto the target character and renders the
/// conditioning stacks for it.
pub fn reenact(cfg: &ReenactConfig, exec: Exec) -> Result<ReenactOutput> {
    cfg.render.check()?;
    cfg.render.camera()?;
    let (_, src_skel) = cfg.source.load()?;
    let (mesh, trgt_skel) = cfg.target.load()?;
    let src_motion = cfg.source_motion.load(&src_skel)?;
    src_motion.check(&src_skel)?;
    let (mut motion, report) = retarget_sequence(&src_skel, &src_motion, &trgt_skel, &cfg.retarget)?;
    if let Some(train) = &cfg.target_motion {
        let train = train.load(&trgt_skel)?;
        train.check(&trgt_skel)?;
        motion = apply_root_offset(&motion, &train.root_positions(&trgt_skel), &motion.root_positions(&trgt_skel))?;
    }
    motion.check(&trgt_skel)?;
    let scene = Scene::new(mesh, trgt_skel, cfg.render.clone())?;
    let manifest = render_motion(&scene, &motion, &cfg.out_dir, &|_| Split::Test, cfg.resume, exec)?;
    motion.save(cfg.out_dir.join("motion.json"))?;
    std::fs::write(
        cfg.out_dir.join("retarget_report.json"),
        serde_json::to_string_pretty(&report).map_err(|e| Error::json(&cfg.out_dir, e))?,
    )
    .map_err(|e| Error::io(&cfg.out_dir, e))?;
    Ok(ReenactOutput { manifest, motion, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::MotionKind;

    fn small(mode: ConditioningMode, frames: usize, out: &Path) -> DatasetConfig {
        DatasetConfig {
            character: CharacterSource::Procedural(CharacterSpec {
                radial_segments: 8,
                length_segments: 2,
                texture_size: 32,
                ..Default::default()
            }),
            motion: MotionSource::Procedural(ProceduralMotion { kind: MotionKind::Walk, frames, fps: 25.0, seed: 1 }),
            render: RenderSettings { resolution: 32, mode, ..Default::default() },
            val_fraction: 0.25,
            out_dir: out.to_path_buf(),
            resume: false,
        }
    }

    #[test]
    fn dataset_layout_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(&small(ConditioningMode::RgbdParts, 8, dir.path()), Exec::default()).unwrap();
        assert_eq!(m.frames.len(), 8);
        assert_eq!(m.frames.iter().filter(|f| f.split == Split::Val).count(), 2);
        m.validate(dir.path()).unwrap();
        let s = read_stack(&dir.path().join(&m.frames[0].stack_path)).unwrap();
        assert_eq!(s.planes.channels, 27);
        let back = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, m);

        std::fs::remove_file(dir.path().join(&m.frames[5].stack_path)).unwrap();
        let err = m.validate(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Format(msg) if msg.contains("frame 5")), "{err}");
        std::fs::write(dir.path().join(&m.frames[5].stack_path), b"NRCSjunk").unwrap();
        let err = m.validate(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Format(msg) if msg.contains("frame 5")), "{err}");
    }

    #[test]
    fn skeleton_mode_has_six_channels() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(&small(ConditioningMode::Skeleton, 3, dir.path()), Exec::default()).unwrap();
        let s = read_stack(&dir.path().join(&m.frames[2].stack_path)).unwrap();
        assert_eq!(s.planes.channels, 6);
    }

    #[test]
    fn missing_camera_fails_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut cfg = small(ConditioningMode::RgbdParts, 3, &out);
        cfg.render.camera = Some(dir.path().join("nope.json"));
        assert!(matches!(build_dataset(&cfg, Exec::default()), Err(Error::Camera(_))));
        assert!(!out.exists());
    }

    #[test]
    fn chunked_smoothing_matches_whole_sequence() {
        let (mesh, skel) = make_sample_character(&CharacterSpec {
            radial_segments: 6,
            length_segments: 1,
            texture_size: 16,
            ..Default::default()
        })
        .unwrap();
        let scene = Scene::new(mesh, skel, RenderSettings { resolution: 16, ..Default::default() }).unwrap();
        let motion = ProceduralMotion { kind: MotionKind::Kick, frames: 20, fps: 25.0, seed: 2 }
            .generate(&scene.skel)
            .unwrap();
        let (all, all_j) = scene.pose_range(&motion.frames, 0, 20, Exec::Sequential).unwrap();
        for (lo, hi) in [(0, 7), (7, 13), (13, 20)] {
            let (part, part_j) = scene.pose_range(&motion.frames, lo, hi, Exec::Parallel).unwrap();
            assert_eq!(&all[lo..hi], &part[..]);
            assert_eq!(&all_j[lo..hi], &part_j[..]);
        }
    }

    #[test]
    fn resume_keeps_finished_frames() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(ConditioningMode::RgbMask, 4, dir.path());
        let m = build_dataset(&cfg, Exec::default()).unwrap();
        let keep = dir.path().join(&m.frames[1].target_path);
        let before = std::fs::metadata(&keep).unwrap().modified().unwrap();
        std::fs::remove_file(dir.path().join(&m.frames[2].stack_path)).unwrap();
        cfg.resume = true;
        std::thread::sleep(std::time::Duration::from_millis(20));
        build_dataset(&cfg, Exec::default()).unwrap().validate(dir.path()).unwrap();
        assert_eq!(std::fs::metadata(&keep).unwrap().modified().unwrap(), before);
    }

    #[test]
    fn frame_errors_name_absolute_frame() {
        let e = shift_frame(Error::NonFinite("frame 3: root".into()), 64);
        assert!(matches!(e, Error::NonFinite(m) if m == "frame 67: root"));
    }
}
