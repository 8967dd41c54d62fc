//! `reenact` command-line tool.
//!
//! Every subcommand reads an optional `--config file.json` holding its job
//! description; flags given on the command line override the file. Exit
//! codes: 0 success, 2 invalid input, 3 runtime failure.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use image::DynamicImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use reenact_core::charmesh::skin;
use reenact_core::conditioning::{compose, write_contact_sheet, write_stack, ConditioningInput, ConditioningMode};
use reenact_core::motion::{MotionKind, ProceduralMotion};
use reenact_core::pipeline::{
    build_dataset, reenact, CharacterSource, DatasetConfig, MotionSource, ReenactConfig, RenderSettings, Scene,
};
use reenact_core::raster::{part_visualization, render_skeleton, BackgroundSpec, SkeletonStyle};
use reenact_core::retarget::{apply_root_offset, retarget_sequence, RetargetConfig};
use reenact_core::{Error, Exec, Result};
use reenact_service::{ServiceConfig, DEFAULT_PORT};

#[derive(Parser, Debug)]
#[command(name = "reenact", version, about = "Motion retargeting and conditioning-image pipeline")]
struct Cli {
    /// JSON job description; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transfer a motion from a source skeleton to a target skeleton.
    Retarget(RetargetArgs),
    /// Render one frame: color, depth, part masks, skeleton and its stack.
    Render(RenderArgs),
    /// Build a paired (conditioning stack, ground-truth frame) dataset.
    Dataset(DatasetArgs),
    /// Retarget a motion onto a target character and emit its stacks.
    Reenact(ReenactArgs),
    /// Run the pose-editing HTTP service.
    Serve(ServeArgs),
}

/// Character selection: an OBJ with rig sidecar, or the procedural humanoid.
#[derive(Args, Debug, Default, Clone)]
struct CharacterFlags {
    /// Character OBJ (with `.rig.json` sidecar).
    #[arg(long)]
    character: Option<PathBuf>,
    /// Uniform scale of the procedural character.
    #[arg(long)]
    character_scale: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
struct MotionFlags {
    /// Motion JSON file.
    #[arg(long)]
    motion: Option<PathBuf>,
    /// Procedural motion kind: walk, wave, kick or idle.
    #[arg(long)]
    motion_kind: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    fps: Option<f64>,
    /// Seed for procedural motion and character texture.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default, Clone)]
struct RenderFlags {
    #[arg(long)]
    resolution: Option<u32>,
    /// skeleton, rgb_mask, rgb_parts, rgbd_mask or rgbd_parts.
    #[arg(long)]
    mode: Option<String>,
    /// Camera JSON.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Background image with the output's dimensions.
    #[arg(long)]
    background: Option<PathBuf>,
    /// Temporal smoothing sigma in frames.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    no_smoothing: bool,
    /// Write per-channel contact sheets next to the stacks.
    #[arg(long)]
    preview: bool,
}

#[derive(Args, Debug)]
struct RetargetArgs {
    /// Source character OBJ (default: procedural humanoid).
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target character OBJ (default: procedural humanoid).
    #[arg(long)]
    target: Option<PathBuf>,
    /// Uniform scale of the procedural target.
    #[arg(long)]
    target_scale: Option<f64>,
    #[command(flatten)]
    motion: MotionFlags,
    /// Target's own motion; the result is moved to its mean root position.
    #[arg(long)]
    target_motion: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Output motion JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    character: CharacterFlags,
    #[command(flatten)]
    motion: MotionFlags,
    /// Frame of the motion to render (rest pose without a motion).
    #[arg(long)]
    frame: Option<usize>,
    #[command(flatten)]
    render: RenderFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[command(flatten)]
    character: CharacterFlags,
    #[command(flatten)]
    motion: MotionFlags,
    #[command(flatten)]
    render: RenderFlags,
    /// Trailing fraction of frames tagged for validation.
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep frames finished by an earlier, interrupted run.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct ReenactArgs {
    /// Source character OBJ (default: procedural humanoid).
    #[arg(long)]
    source: Option<PathBuf>,
    #[command(flatten)]
    motion: MotionFlags,
    /// Target character OBJ (default: procedural humanoid).
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    target_scale: Option<f64>,
    /// Target's training motion, used for the root offset.
    #[arg(long)]
    target_motion: Option<PathBuf>,
    #[command(flatten)]
    render: RenderFlags,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    host: Option<IpAddr>,
    /// Base URL of the image translator service for `mode=neural` previews.
    #[arg(long)]
    translator_url: Option<String>,
    /// Directory holding the editor UI, served at `/`.
    #[arg(long)]
    ui: Option<PathBuf>,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_mode(s: &str) -> Result<ConditioningMode> {
    s.parse()
}

fn parse_kind(s: &str) -> Result<MotionKind> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| Error::Config(format!("unknown motion kind {s:?} (walk, wave, kick, idle)")))
}

fn character_source(path: Option<&PathBuf>, scale: Option<f64>, current: CharacterSource, seed: Option<u64>) -> CharacterSource {
    let mut c = match path {
        Some(p) => CharacterSource::Obj(p.clone()),
        None => current,
    };
    if let CharacterSource::Procedural(spec) = &mut c {
        if let Some(f) = scale {
            *spec = spec.scaled(f);
        }
        if let Some(s) = seed {
            spec.seed = s;
        }
    }
    c
}

fn motion_source(flags: &MotionFlags, current: Option<MotionSource>) -> Result<Option<MotionSource>> {
    if let Some(p) = &flags.motion {
        return Ok(Some(MotionSource::File(p.clone())));
    }
    let procedural_flags = flags.motion_kind.is_some() || flags.frames.is_some() || flags.fps.is_some() || flags.seed.is_some();
    let mut m = match current {
        Some(MotionSource::Procedural(p)) => p,
        Some(file @ MotionSource::File(_)) => return Ok(Some(file)),
        None if procedural_flags => ProceduralMotion { kind: MotionKind::Walk, frames: 100, fps: 25.0, seed: 0 },
        None => return Ok(None),
    };
    if let Some(k) = &flags.motion_kind {
        m.kind = parse_kind(k)?;
    }
    if let Some(n) = flags.frames {
        m.frames = n;
    }
    if let Some(f) = flags.fps {
        m.fps = f;
    }
    if let Some(s) = flags.seed {
        m.seed = s;
    }
    Ok(Some(MotionSource::Procedural(m)))
}

fn apply_render_flags(flags: &RenderFlags, r: &mut RenderSettings) -> Result<()> {
    if let Some(v) = flags.resolution {
        r.resolution = v;
    }
    if let Some(m) = &flags.mode {
        r.mode = parse_mode(m)?;
    }
    if let Some(c) = &flags.camera {
        r.camera = Some(c.clone());
    }
    if let Some(b) = &flags.background {
        r.background = BackgroundSpec::Image { path: b.clone() };
    }
    if let Some(s) = flags.sigma {
        r.smoothing_sigma = Some(s);
    }
    if flags.no_smoothing {
        r.smoothing_sigma = None;
    }
    r.preview |= flags.preview;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RetargetJob {
    source: CharacterSource,
    source_motion: MotionSource,
    target: CharacterSource,
    target_motion: Option<MotionSource>,
    retarget: RetargetConfig,
    out: PathBuf,
}

impl Default for RetargetJob {
    fn default() -> Self {
        RetargetJob {
            source: CharacterSource::default(),
            source_motion: MotionSource::Procedural(ProceduralMotion { kind: MotionKind::Walk, frames: 100, fps: 25.0, seed: 0 }),
            target: CharacterSource::default(),
            target_motion: None,
            retarget: RetargetConfig::default(),
            out: PathBuf::from("retargeted.json"),
        }
    }
}

fn cmd_retarget(cfg_path: Option<&Path>, a: RetargetArgs) -> Result<()> {
    let mut job: RetargetJob = load_config(cfg_path)?;
    job.source = character_source(a.source.as_ref(), None, job.source, a.motion.seed);
    job.target = character_source(a.target.as_ref(), a.target_scale, job.target, a.motion.seed);
    if let Some(m) = motion_source(&a.motion, Some(job.source_motion.clone()))? {
        job.source_motion = m;
    }
    if let Some(p) = a.target_motion {
        job.target_motion = Some(MotionSource::File(p));
    }
    if let Some(n) = a.max_iterations {
        job.retarget.max_iterations = n;
    }
    if let Some(o) = a.out {
        job.out = o;
    }

    let (_, src) = job.source.load()?;
    let (_, trgt) = job.target.load()?;
    let motion = job.source_motion.load(&src)?;
    let (mut out, report) = retarget_sequence(&src, &motion, &trgt, &job.retarget)?;
    if let Some(tm) = &job.target_motion {
        let train = tm.load(&trgt)?;
        out = apply_root_offset(&out, &train.root_positions(&trgt), &out.root_positions(&trgt))?;
    }
    out.save(&job.out)?;
    let converged = report.converged.iter().filter(|&&c| c).count();
    println!(
        "retargeted {} frames -> {} (max residual {:.3e}, {converged}/{} converged)",
        out.len(),
        job.out.display(),
        report.max_residual(),
        out.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
struct RenderJob {
    character: CharacterSource,
    motion: Option<MotionSource>,
    frame: usize,
    render: RenderSettings,
    out_dir: Option<PathBuf>,
}

fn save_png(img: impl Into<DynamicImage>, path: &Path) -> Result<()> {
    img.into()
        .save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

fn cmd_render(cfg_path: Option<&Path>, a: RenderArgs) -> Result<()> {
    let mut job: RenderJob = load_config(cfg_path)?;
    job.character = character_source(a.character.character.as_ref(), a.character.character_scale, job.character, a.motion.seed);
    job.motion = motion_source(&a.motion, job.motion.take())?;
    if let Some(f) = a.frame {
        job.frame = f;
    }
    if cfg_path.is_none() && a.render.resolution.is_none() {
        job.render.resolution = 256;
    }
    apply_render_flags(&a.render, &mut job.render)?;
    let out_dir = a.out.or(job.out_dir).unwrap_or_else(|| PathBuf::from("render"));

    job.render.check()?;
    job.render.camera()?;
    let (mesh, skel) = job.character.load()?;
    let pose = match &job.motion {
        None => reenact_core::Pose::rest(&skel),
        Some(m) => {
            let motion = m.load(&skel)?;
            motion.check(&skel)?;
            motion.frames.get(job.frame).cloned().ok_or_else(|| {
                Error::Config(format!("frame {} out of range (motion has {})", job.frame, motion.len()))
            })?
        }
    };
    let scene = Scene::new(mesh, skel, job.render.clone())?;
    let posed = skin(&scene.mesh, &scene.skel, &pose)?;
    let out = scene.render_conditioning(&posed)?;
    let skeleton = render_skeleton(&scene.skel, &pose, &scene.cam, &SkeletonStyle::default())?;
    let (lit, _) = scene.render_lit(&posed)?;
    let stack = if scene.settings.mode.uses_mesh() {
        compose(ConditioningInput::Mesh(&out), &scene.background, scene.settings.mode)?
    } else {
        compose(ConditioningInput::Skeleton(&skeleton), &scene.background, scene.settings.mode)?
    };

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io { path: out_dir.clone(), source: e })?;
    out.color.save_rgb_png(&out_dir.join("color.png"))?;
    lit.save_rgb_png(&out_dir.join("lit.png"))?;
    skeleton.save_rgb_png(&out_dir.join("skeleton.png"))?;
    save_png(out.depth.to_gray8(0), &out_dir.join("depth.png"))?;
    save_png(part_visualization(&out), &out_dir.join("parts.png"))?;
    write_stack(&stack, &out_dir.join("stack.nrcs"))?;
    if scene.settings.preview {
        write_contact_sheet(&stack, &out_dir.join("stack.sheet.png"))?;
    }
    println!(
        "rendered frame {} at {}x{} ({} stack, {} channels) -> {}",
        job.frame,
        scene.cam.width,
        scene.cam.height,
        stack.mode,
        stack.planes.channels,
        out_dir.display()
    );
    Ok(())
}

fn cmd_dataset(cfg_path: Option<&Path>, a: DatasetArgs, exec: Exec) -> Result<()> {
    let mut cfg: DatasetConfig = load_config(cfg_path)?;
    cfg.character = character_source(a.character.character.as_ref(), a.character.character_scale, cfg.character, a.motion.seed);
    if let Some(m) = motion_source(&a.motion, Some(cfg.motion.clone()))? {
        cfg.motion = m;
    }
    apply_render_flags(&a.render, &mut cfg.render)?;
    if let Some(v) = a.val_fraction {
        cfg.val_fraction = v;
    }
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    cfg.resume |= a.resume;
    let m = build_dataset(&cfg, exec)?;
    println!(
        "wrote {} frames ({} stacks, {} channels, {}x{}) -> {}",
        m.frames.len(),
        m.mode,
        m.mode.channels(),
        m.resolution,
        m.resolution,
        cfg.out_dir.join("manifest.json").display()
    );
    Ok(())
}

fn cmd_reenact(cfg_path: Option<&Path>, a: ReenactArgs, exec: Exec) -> Result<()> {
    let mut cfg: ReenactConfig = load_config(cfg_path)?;
    cfg.source = character_source(a.source.as_ref(), None, cfg.source, a.motion.seed);
    cfg.target = character_source(a.target.as_ref(), a.target_scale, cfg.target, a.motion.seed);
    if let Some(m) = motion_source(&a.motion, Some(cfg.source_motion.clone()))? {
        cfg.source_motion = m;
    }
    if let Some(p) = a.target_motion {
        cfg.target_motion = Some(MotionSource::File(p));
    }
    apply_render_flags(&a.render, &mut cfg.render)?;
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    cfg.resume |= a.resume;
    let out = reenact(&cfg, exec)?;
    println!(
        "reenacted {} frames (max retarget residual {:.3e}) -> {}",
        out.manifest.frames.len(),
        out.report.max_residual(),
        cfg.out_dir.join("manifest.json").display()
    );
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct ServeJob {
    port: Option<u16>,
    host: Option<IpAddr>,
    translator_url: Option<String>,
    ui_dir: Option<PathBuf>,
}

fn cmd_serve(cfg_path: Option<&Path>, a: ServeArgs) -> Result<()> {
    let mut job: ServeJob = load_config(cfg_path)?;
    job.port = a.port.or(job.port);
    job.host = a.host.or(job.host);
    job.translator_url = a.translator_url.or(job.translator_url);
    job.ui_dir = a.ui.or(job.ui_dir);
    let addr = SocketAddr::new(job.host.unwrap_or([127, 0, 0, 1].into()), job.port.unwrap_or(DEFAULT_PORT));
    let config = ServiceConfig { translator_url: job.translator_url, ui_dir: job.ui_dir };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: "tokio runtime".into(), source: e })?;
    println!("serving on http://{addr}");
    rt.block_on(reenact_service::serve(addr, config))
        .map_err(|e| Error::Io { path: addr.to_string().into(), source: e })
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Retarget(a) => cmd_retarget(cfg, a),
        Command::Render(a) => cmd_render(cfg, a),
        Command::Dataset(a) => cmd_dataset(cfg, a, exec),
        Command::Reenact(a) => cmd_reenact(cfg, a, exec),
        Command::Serve(a) => cmd_serve(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
