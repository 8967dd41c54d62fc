//! Interactive pose-editing service.
//!
//! ```text
//! POST /session                     {character?, camera?, resolution?, background?} -> {id, ...}
//! GET  /session/{id}                current pose and keypoint positions
//! POST /session/{id}/ik             {handles: [{keypoint, target}], lock_root?} -> {pose, residual, converged, ...}
//! GET  /session/{id}/preview.png    ?mode=composite|masks|depth|neural
//! ```
//!
//! Each session owns a character, a camera and the current pose. Requests on
//! one session are serialized by its lock; rendering and solving run on the
//! blocking thread pool.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use reenact_core::charmesh::skin;
use reenact_core::conditioning::{compose, ConditioningInput, ConditioningMode};
use reenact_core::kinematics::{fk_keypoints, Pose, Skeleton};
use reenact_core::motion::PoseRecord;
use reenact_core::pipeline::{CharacterSource, RenderSettings, Scene};
use reenact_core::raster::{part_visualization, BackgroundSpec, Camera};
use reenact_core::retarget::{solve_ik, FreeParams, IkTarget, RetargetConfig, Termination};
use reenact_core::{Error, Vec3};

pub const DEFAULT_PORT: u16 = 8787;
const DEFAULT_RESOLUTION: u32 = 256;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Base URL of the image translator; `mode=neural` previews POST the
    /// conditioning stack to `{translator_url}/infer`.
    pub translator_url: Option<String>,
    /// Directory with the editor UI, served at `/`.
    pub ui_dir: Option<PathBuf>,
}

struct Session {
    scene: Arc<Scene>,
    pose: Pose,
}

struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    http: reqwest::Client,
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub enum ApiError {
    Invalid(String),
    NotFound(String),
    NotImplemented(String),
    Upstream(String),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            ApiError::Invalid(e.to_string())
        } else {
            ApiError::Internal(e.to_string())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::Invalid(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::NotImplemented(m) => (StatusCode::NOT_IMPLEMENTED, m),
            ApiError::Upstream(m) => (StatusCode::BAD_GATEWAY, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(serde_json::json!({ "error": msg }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum CameraArg {
    Path(PathBuf),
    Inline(Camera),
}

#[derive(Debug, Deserialize, Default)]
#[serde(default)]
pub struct CreateSession {
    pub character: Option<CharacterSource>,
    pub camera: Option<CameraArg>,
    pub resolution: Option<u32>,
    pub background: Option<BackgroundSpec>,
}

#[derive(Debug, Serialize)]
pub struct KeypointView {
    pub name: String,
    pub position: [f64; 3],
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    pub id: String,
    pub resolution: u32,
    pub camera: Camera,
    pub joints: Vec<String>,
    /// Parent index per joint, `null` for the root.
    pub parents: Vec<Option<usize>>,
    pub pose: PoseRecord,
    pub keypoints: Vec<KeypointView>,
}

fn keypoint_views(skel: &Skeleton, pose: &Pose) -> ApiResult<Vec<KeypointView>> {
    let kp = fk_keypoints(skel, pose)?;
    Ok(skel
        .keypoint_names()
        .iter()
        .zip(kp)
        .map(|(name, p)| KeypointView {
            name: name.clone(),
            position: p.into(),
        })
        .collect())
}

fn session_view(id: &str, s: &Session) -> ApiResult<SessionView> {
    let skel = &s.scene.skel;
    Ok(SessionView {
        id: id.to_string(),
        resolution: s.scene.settings.resolution,
        camera: s.scene.cam.clone(),
        joints: skel.joints().iter().map(|j| j.name.clone()).collect(),
        parents: skel.joints().iter().map(|j| j.parent).collect(),
        pose: PoseRecord::from(&s.pose),
        keypoints: keypoint_views(skel, &s.pose)?,
    })
}

fn build_scene(req: CreateSession) -> ApiResult<Scene> {
    let resolution = req.resolution.unwrap_or(DEFAULT_RESOLUTION);
    let (mesh, skel) = req.character.unwrap_or_default().load().map_err(|e| ApiError::Invalid(e.to_string()))?;
    let mut settings = RenderSettings {
        resolution,
        mode: ConditioningMode::RgbdParts,
        smoothing_sigma: None,
        ..Default::default()
    };
    if let Some(bg) = req.background {
        settings.background = bg;
    }
    let scene = match req.camera {
        None => Scene::new(mesh, skel, settings),
        Some(CameraArg::Path(p)) => {
            settings.camera = Some(p);
            Scene::new(mesh, skel, settings)
        }
        Some(CameraArg::Inline(cam)) => {
            if req.resolution.is_some_and(|r| r != cam.width || r != cam.height) {
                return Err(ApiError::Invalid(format!(
                    "camera is {}x{}, session resolution is {resolution}",
                    cam.width, cam.height
                )));
            }
            Scene::with_camera(mesh, skel, settings, cam)
        }
    };
    // Every failure while setting up a session is a bad request.
    scene.map_err(|e| ApiError::Invalid(e.to_string()))
}

async fn create_session(State(app): State<Shared>, Json(req): Json<CreateSession>) -> ApiResult<Json<SessionView>> {
    let scene = blocking(move || build_scene(req)).await?;
    let pose = Pose::rest(&scene.skel);
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session { scene: Arc::new(scene), pose };
    let view = session_view(&id, &session)?;
    app.sessions.write().unwrap().insert(id.clone(), Arc::new(Mutex::new(session)));
    log::info!("session {id} created");
    Ok(Json(view))
}

fn lookup(app: &AppState, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
    app.sessions
        .read()
        .unwrap()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
}

async fn get_session(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let session = lookup(&app, &id)?;
    let s = session.lock().unwrap();
    Ok(Json(session_view(&id, &s)?))
}

#[derive(Debug, Deserialize)]
pub struct Handle {
    pub keypoint: String,
    pub target: [f64; 3],
}

#[derive(Debug, Deserialize)]
pub struct IkRequest {
    pub handles: Vec<Handle>,
    /// Keep the root translation and rotation fixed (default).
    #[serde(default = "yes")]
    pub lock_root: bool,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize)]
pub struct IkResponse {
    pub pose: PoseRecord,
    /// Sum of squared handle distances after the solve.
    pub residual: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub keypoints: Vec<KeypointView>,
}

async fn solve(State(app): State<Shared>, Path(id): Path<String>, Json(req): Json<IkRequest>) -> ApiResult<Json<IkResponse>> {
    let session = lookup(&app, &id)?;
    blocking(move || {
        let mut s = session.lock().unwrap();
        let skel = &s.scene.skel;
        if req.handles.is_empty() {
            return Err(ApiError::Invalid("no handles given".into()));
        }
        let targets = req
            .handles
            .iter()
            .map(|h| {
                if !skel.keypoint_names().iter().any(|k| k == &h.keypoint) {
                    return Err(ApiError::Invalid(format!("unknown keypoint `{}`", h.keypoint)));
                }
                let target = Vec3::from(h.target);
                if !target.iter().all(|v| v.is_finite()) {
                    return Err(ApiError::Invalid(format!("non-finite target for `{}`", h.keypoint)));
                }
                Ok(IkTarget {
                    joint: skel.joint_index(&h.keypoint).expect("keypoints are joints"),
                    target,
                    weight: 1.0,
                })
            })
            .collect::<ApiResult<Vec<_>>>()?;
        let mut cfg = RetargetConfig::default();
        if let Some(n) = req.max_iterations {
            cfg.max_iterations = n;
        }
        let free = if req.lock_root { FreeParams::ROOT_LOCKED } else { FreeParams::ALL };
        let sol = solve_ik(skel, &targets, &s.pose, &cfg, free)?;
        let keypoints = keypoint_views(skel, &sol.pose)?;
        // Only whole poses are ever stored, under the session lock.
        s.pose = sol.pose.clone();
        Ok(Json(IkResponse {
            pose: PoseRecord::from(&sol.pose),
            residual: sol.residual,
            converged: sol.converged,
            termination: sol.termination,
            iterations: sol.iterations,
            keypoints,
        }))
    })
    .await
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PreviewMode {
    #[default]
    Composite,
    Masks,
    Depth,
    Neural,
}

#[derive(Debug, Deserialize)]
pub struct PreviewQuery {
    #[serde(default)]
    pub mode: PreviewMode,
}

fn png(img: DynamicImage) -> ApiResult<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| ApiError::Internal(format!("png encoding: {e}")))?;
    Ok(buf.into_inner())
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")], bytes).into_response()
}

async fn preview(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    let session = lookup(&app, &id)?;
    if q.mode == PreviewMode::Neural && app.config.translator_url.is_none() {
        return Err(ApiError::NotImplemented("no translator configured (translator_url)".into()));
    }
    let (scene, pose) = {
        let s = session.lock().unwrap();
        (s.scene.clone(), s.pose.clone())
    };
    let mode = q.mode;
    let bytes = blocking(move || {
        let posed = skin(&scene.mesh, &scene.skel, &pose)?;
        match mode {
            PreviewMode::Composite => {
                let (img, _) = scene.render_lit(&posed)?;
                png(img.to_rgb8(0).into())
            }
            PreviewMode::Masks => {
                let out = scene.render_conditioning(&posed)?;
                png(part_visualization(&out).into())
            }
            PreviewMode::Depth => {
                let out = scene.render_conditioning(&posed)?;
                png(out.depth.to_gray8(0).into())
            }
            PreviewMode::Neural => {
                let out = scene.render_conditioning(&posed)?;
                let stack = compose(ConditioningInput::Mesh(&out), &scene.background, ConditioningMode::RgbdParts)?;
                Ok(stack.to_bytes())
            }
        }
    })
    .await?;
    if mode != PreviewMode::Neural {
        return Ok(png_response(bytes));
    }
    let url = format!("{}/infer", app.config.translator_url.as_deref().unwrap().trim_end_matches('/'));
    let resp = app
        .http
        .post(&url)
        .header(header::CONTENT_TYPE, "application/octet-stream")
        .body(bytes)
        .send()
        .await
        .map_err(|e| ApiError::Upstream(format!("translator at {url}: {e}")))?;
    if !resp.status().is_success() {
        return Err(ApiError::Upstream(format!("translator at {url} answered {}", resp.status())));
    }
    let body = resp
        .bytes()
        .await
        .map_err(|e| ApiError::Upstream(format!("translator at {url}: {e}")))?;
    Ok(png_response(body.to_vec()))
}

const PLACEHOLDER: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>reenact edit service</title></head>
<body style="font-family: sans-serif; max-width: 40em; margin: 2em auto">
<h1>reenact edit service</h1>
<p>No UI directory configured. Start with <code>reenact serve --ui &lt;dir&gt;</code> to serve the editor here.</p>
<ul>
<li><code>POST /session</code></li>
<li><code>GET /session/{id}</code></li>
<li><code>POST /session/{id}/ik</code></li>
<li><code>GET /session/{id}/preview.png?mode=composite|masks|depth|neural</code></li>
</ul>
</body></html>
"#;

pub fn router(config: ServiceConfig) -> Router {
    let ui_dir = config.ui_dir.clone().filter(|d| d.is_dir());
    let state = Arc::new(AppState {
        config,
        sessions: RwLock::new(HashMap::new()),
        http: reqwest::Client::new(),
    });
    let api = Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/ik", post(solve))
        .route("/session/{id}/preview.png", get(preview))
        .with_state(state);
    let app = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER) })),
    };
    app.layer(CorsLayer::permissive())
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(config)).await
}
