//! Pinhole-camera software rasterizer.
//!
//! Produces the unlit (or diffuse-lit) color image, the normalized depth
//! image and the per-pixel body part of the front-most triangle. Triangles
//! are clipped against the near plane in camera space, filled with edge
//! functions under the top-left rule and resolved through a z-buffer keyed
//! on camera-space depth. Shading is deferred: the z pass records the winning
//! triangle and its perspective-correct barycentrics, and each covered pixel
//! is shaded exactly once afterwards.

use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::charmesh::{BodyPart, PosedMesh, RiggedMesh, PART_COUNT};
use crate::error::{Error, Result};
use crate::kinematics::{fk_transforms, Pose, Skeleton, Vec3};
use crate::planes::Planes;

/// Pinhole camera. Camera space is x right, y down, z forward; pixel `(i, j)`
/// has its center at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rigid transform, row-major 4x4.
    pub extrinsic: [f64; 16],
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Camera(m));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive ({}, {})", self.fx, self.fy));
        }
        if self.width < 1 || self.height < 1 {
            return bad("image size must be at least 1x1".into());
        }
        if !(self.near > 0.0 && self.far > self.near) || !self.far.is_finite() {
            return bad(format!("need 0 < near < far, got {} / {}", self.near, self.far));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() || !self.extrinsic.iter().all(|v| v.is_finite()) {
            return bad("non-finite intrinsics or extrinsic".into());
        }
        let m = self.extrinsic_matrix();
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        if (r.transpose() * r - Matrix3::identity()).amax() > 1e-6 || r.determinant() <= 0.0 {
            return bad("extrinsic rotation is not orthonormal".into());
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return bad("extrinsic last row must be [0, 0, 0, 1]".into());
        }
        Ok(())
    }

    pub fn extrinsic_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.extrinsic)
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: u32, height: u32, near: f64, far: f64) -> Camera {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        let mut extrinsic = [0.0; 16];
        for i in 0..3 {
            for j in 0..3 {
                extrinsic[4 * i + j] = r[(i, j)];
            }
            extrinsic[4 * i + 3] = t[i];
        }
        extrinsic[15] = 1.0;
        Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            extrinsic,
            near,
            far,
        }
    }

    /// Default full-body view of a ~1.8 m character standing at the origin.
    pub fn default_for_resolution(size: u32) -> Camera {
        Camera::look_at(
            Vec3::new(0.0, 1.0, 4.2),
            Vec3::new(0.0, 0.9, 0.0),
            Vec3::y(),
            1.25 * size as f64,
            size,
            size,
            0.1,
            20.0,
        )
    }

    /// Same camera with the image resampled to `width x height`.
    pub fn with_resolution(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        let m = self.extrinsic_matrix();
        (m.fixed_view::<3, 3>(0, 0) * p) + m.fixed_view::<3, 1>(0, 3)
    }

    /// Pixel coordinates of a camera-space point.
    pub fn project(&self, pc: &Vec3) -> (f64, f64) {
        (self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy)
    }

    /// `2 (z - near) / (far - near) - 1`, clamped to `[-1, 1]`.
    pub fn normalized_depth(&self, z: f64) -> f64 {
        (2.0 * (z - self.near) / (self.far - self.near) - 1.0).clamp(-1.0, 1.0)
    }

    pub fn load(path: &Path) -> Result<Camera> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Camera(format!("cannot read {}: {e}", path.display())))?;
        let cam: Camera = serde_json::from_str(&text)
            .map_err(|e| Error::Camera(format!("{}: {e}", path.display())))?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shading {
    /// Raw texture color.
    Unlit,
    /// Two-sided Lambertian: `ambient + (1 - ambient) * max(0, n . l)` with
    /// `l` pointing towards the light.
    Diffuse { to_light: [f64; 3], ambient: f64 },
}

impl Default for Shading {
    fn default() -> Self {
        Shading::Unlit
    }
}

impl Shading {
    pub fn studio() -> Shading {
        Shading::Diffuse {
            to_light: [0.4, 0.8, 0.6],
            ambient: 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub shading: Shading,
    /// Color written where no triangle covers the pixel.
    pub background_fill: [f32; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            shading: Shading::Unlit,
            background_fill: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Three channels in `[-1, 1]`.
    pub color: Planes,
    /// One channel in `[-1, 1]`; `+1` where nothing is covered.
    pub depth: Planes,
    /// Body-part label of the front-most triangle per pixel, `0` if uncovered.
    pub parts: Vec<u8>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    pub fn coverage(&self) -> Vec<bool> {
        self.parts.iter().map(|&p| p != 0).collect()
    }

    pub fn mask(&self, part: BodyPart) -> Vec<bool> {
        let l = part.label();
        self.parts.iter().map(|&p| p == l).collect()
    }

    /// The six binary masks as `0/1` planes, in label order.
    pub fn masks(&self) -> Planes {
        let n = self.parts.len();
        let mut out = Planes::filled(PART_COUNT, self.width(), self.height(), 0.0);
        for (i, &p) in self.parts.iter().enumerate() {
            if p != 0 {
                out.data[(p as usize - 1) * n + i] = 1.0;
            }
        }
        out
    }

    /// Replaces uncovered pixels with `background`.
    pub fn composite_over(&self, background: &Planes) -> Result<Planes> {
        if background.channels != 3 || !background.same_size(&self.color) {
            return Err(Error::Shape("background must match the render size".into()));
        }
        let n = self.parts.len();
        let mut out = self.color.clone();
        for (i, &p) in self.parts.iter().enumerate() {
            if p == 0 {
                for c in 0..3 {
                    out.data[c * n + i] = background.data[c * n + i];
                }
            }
        }
        Ok(out)
    }
}

/// Camera-space vertex carried through clipping.
#[derive(Debug, Clone, Copy)]
struct ClipVertex {
    pos: Vec3,
    uv: [f64; 2],
    normal: Vec3,
}

impl ClipVertex {
    fn lerp(&self, other: &ClipVertex, t: f64) -> ClipVertex {
        ClipVertex {
            pos: self.pos + (other.pos - self.pos) * t,
            uv: [
                self.uv[0] + (other.uv[0] - self.uv[0]) * t,
                self.uv[1] + (other.uv[1] - self.uv[1]) * t,
            ],
            normal: self.normal + (other.normal - self.normal) * t,
        }
    }
}

/// Screen-space triangle ready for filling.
struct ScreenTri {
    xy: [(f64, f64); 3],
    inv_z: [f64; 3],
    verts: [ClipVertex; 3],
    label: u8,
}

/// Sutherland-Hodgman against `z >= near`; returns a fan-triangulated polygon.
fn clip_near(tri: [ClipVertex; 3], near: f64, out: &mut Vec<[ClipVertex; 3]>) {
    let inside = tri.map(|v| v.pos.z >= near);
    if inside.iter().all(|&b| b) {
        out.push(tri);
        return;
    }
    if inside.iter().all(|&b| !b) {
        return;
    }
    let mut poly: Vec<ClipVertex> = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let (ia, ib) = (inside[i], inside[(i + 1) % 3]);
        if ia {
            poly.push(a);
        }
        if ia != ib {
            let t = (near - a.pos.z) / (b.pos.z - a.pos.z);
            let mut v = a.lerp(&b, t);
            v.pos.z = near;
            poly.push(v);
        }
    }
    for k in 1..poly.len() - 1 {
        out.push([poly[0], poly[k], poly[k + 1]]);
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Edge `a -> b` of a positively oriented triangle owns its boundary pixels
/// when it is a top edge or a left edge.
#[inline]
fn is_top_left(a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Z-buffer pass state: nearest camera depth, winning triangle, and the
/// perspective-correct barycentrics of that fragment.
struct DepthPass {
    width: usize,
    height: usize,
    z: Vec<f64>,
    tri: Vec<u32>,
    bary: Vec<[f64; 3]>,
}

const NO_TRI: u32 = u32::MAX;

impl DepthPass {
    fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        DepthPass {
            width,
            height,
            z: vec![f64::INFINITY; n],
            tri: vec![NO_TRI; n],
            bary: vec![[0.0; 3]; n],
        }
    }

    fn fill(&mut self, id: u32, t: &ScreenTri, far: f64) {
        let [mut a, mut b, mut c] = t.xy;
        let mut order = [0usize, 1, 2];
        let mut area = edge(a, b, c);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        if area < 0.0 {
            std::mem::swap(&mut b, &mut c);
            order.swap(1, 2);
            area = -area;
        }
        let min_x = a.0.min(b.0).min(c.0).floor().max(0.0) as usize;
        let min_y = a.1.min(b.1).min(c.1).floor().max(0.0) as usize;
        let max_x = (a.0.max(b.0).max(c.0).ceil().max(0.0) as usize).min(self.width);
        let max_y = (a.1.max(b.1).max(c.1).ceil().max(0.0) as usize).min(self.height);
        if min_x >= max_x || min_y >= max_y {
            return;
        }
        let tl = [is_top_left(b, c), is_top_left(c, a), is_top_left(a, b)];
        let inv_z = order.map(|k| t.inv_z[k]);
        let inv_area = 1.0 / area;
        let _ = &mut a;

        for y in min_y..max_y {
            let py = y as f64 + 0.5;
            for x in min_x..max_x {
                let p = (x as f64 + 0.5, py);
                let w = [edge(b, c, p), edge(c, a, p), edge(a, b, p)];
                if !(0..3).all(|k| w[k] > 0.0 || (w[k] == 0.0 && tl[k])) {
                    continue;
                }
                let l = w.map(|v| v * inv_area);
                let iz = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
                let z = 1.0 / iz;
                if z > far {
                    continue;
                }
                let idx = y * self.width + x;
                if z < self.z[idx] {
                    self.z[idx] = z;
                    self.tri[idx] = id;
                    // Perspective-correct weights, mapped back to the
                    // triangle's original vertex order.
                    let mut pc = [0.0; 3];
                    for k in 0..3 {
                        pc[order[k]] = l[k] * inv_z[k] * z;
                    }
                    self.bary[idx] = pc;
                }
            }
        }
    }
}

fn vertex_normals(mesh: &RiggedMesh, verts: &[Vec3]) -> Vec<Vec3> {
    let mut normals = vec![Vec3::zeros(); verts.len()];
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i as usize);
        let n = (verts[b] - verts[a]).cross(&(verts[c] - verts[a]));
        normals[a] += n;
        normals[b] += n;
        normals[c] += n;
    }
    for n in &mut normals {
        let len = n.norm();
        if len > 0.0 {
            *n /= len;
        }
    }
    normals
}

/// Bilinear texture lookup with clamp-to-edge addressing, in `[0, 1]` RGB.
pub fn sample_bilinear(tex: &RgbImage, u: f64, v: f64) -> [f64; 3] {
    let (w, h) = (tex.width() as i64, tex.height() as i64);
    let x = u * w as f64 - 0.5;
    let y = v * h as f64 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let texel = |xi: i64, yi: i64| {
        let p = tex.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32);
        [p[0] as f64, p[1] as f64, p[2] as f64]
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (texel(x0, y0), texel(x0 + 1, y0), texel(x0, y0 + 1), texel(x0 + 1, y0 + 1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fx;
        let bottom = c[k] + (d[k] - c[k]) * fx;
        out[k] = (top + (bottom - top) * fy) / 255.0;
    }
    out
}

/// Renders a posed mesh: color, normalized depth and per-pixel part labels.
pub fn render(mesh: &RiggedMesh, posed: &PosedMesh, cam: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    cam.validate()?;
    if posed.vertices.len() != mesh.vertices.len() {
        return Err(Error::Shape(format!(
            "posed mesh has {} vertices, rig has {}",
            posed.vertices.len(),
            mesh.vertices.len()
        )));
    }
    if !posed.vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite("posed vertices".into()));
    }
    let (w, h) = (cam.width as usize, cam.height as usize);

    let ext = cam.extrinsic_matrix();
    let rot = ext.fixed_view::<3, 3>(0, 0).into_owned();
    let cam_pos: Vec<Vec3> = posed.vertices.iter().map(|v| cam.to_camera(v)).collect();
    let lit = matches!(opts.shading, Shading::Diffuse { .. });
    let normals: Vec<Vec3> = if lit {
        vertex_normals(mesh, &posed.vertices).iter().map(|n| rot * n).collect()
    } else {
        vec![Vec3::zeros(); cam_pos.len()]
    };

    let mut tris: Vec<ScreenTri> = Vec::with_capacity(mesh.triangles.len());
    let mut clipped = Vec::with_capacity(2);
    for (t, &label) in mesh.triangles.iter().zip(&mesh.part_labels) {
        let cv = t.map(|i| {
            let i = i as usize;
            ClipVertex {
                pos: cam_pos[i],
                uv: mesh.uvs[i],
                normal: normals[i],
            }
        });
        clipped.clear();
        clip_near(cv, cam.near, &mut clipped);
        for tri in &clipped {
            tris.push(ScreenTri {
                xy: tri.map(|v| cam.project(&v.pos)),
                inv_z: tri.map(|v| 1.0 / v.pos.z),
                verts: *tri,
                label,
            });
        }
    }

    let mut pass = DepthPass::new(w, h);
    for (id, t) in tris.iter().enumerate() {
        pass.fill(id as u32, t, cam.far);
    }

    let light = match opts.shading {
        Shading::Diffuse { to_light, ambient } => Some((rot * Vec3::from(to_light).normalize(), ambient)),
        Shading::Unlit => None,
    };
    let n = w * h;
    let mut color = Planes::filled(3, w, h, 0.0);
    for c in 0..3 {
        color.plane_mut(c).fill(opts.background_fill[c]);
    }
    let mut depth = Planes::filled(1, w, h, 1.0);
    let mut parts = vec![0u8; n];
    for idx in 0..n {
        let id = pass.tri[idx];
        if id == NO_TRI {
            continue;
        }
        let t = &tris[id as usize];
        let b = pass.bary[idx];
        let u = b[0] * t.verts[0].uv[0] + b[1] * t.verts[1].uv[0] + b[2] * t.verts[2].uv[0];
        let v = b[0] * t.verts[0].uv[1] + b[1] * t.verts[1].uv[1] + b[2] * t.verts[2].uv[1];
        let mut rgb = sample_bilinear(&mesh.texture, u, v);
        if let Some((l, ambient)) = light {
            let mut nrm = t.verts[0].normal * b[0] + t.verts[1].normal * b[1] + t.verts[2].normal * b[2];
            let z = pass.z[idx];
            let view = Vec3::new(
                ((idx % w) as f64 + 0.5 - cam.cx) / cam.fx * z,
                ((idx / w) as f64 + 0.5 - cam.cy) / cam.fy * z,
                z,
            );
            if nrm.dot(&view) > 0.0 {
                nrm = -nrm;
            }
            let len = nrm.norm();
            let ndotl = if len > 0.0 { (nrm.dot(&l) / len).max(0.0) } else { 0.0 };
            let shade = ambient + (1.0 - ambient) * ndotl;
            rgb = rgb.map(|x| x * shade);
        }
        for c in 0..3 {
            color.data[c * n + idx] = (2.0 * rgb[c] - 1.0) as f32;
        }
        depth.data[idx] = cam.normalized_depth(pass.z[idx]) as f32;
        parts[idx] = t.label;
    }

    Ok(RenderOutput { color, depth, parts })
}

/// Silhouette of `posed` projected onto the ground plane `y = ground_y` along
/// the light direction, as seen by `cam`.
pub fn ground_shadow(mesh: &RiggedMesh, posed: &PosedMesh, cam: &Camera, to_light: Vec3, ground_y: f64) -> Result<Vec<bool>> {
    let l = to_light.normalize();
    if l.y <= 1e-6 {
        return Err(Error::Config("light must come from above the ground".into()));
    }
    let flat = PosedMesh {
        vertices: posed
            .vertices
            .iter()
            .map(|p| {
                let h = (p.y - ground_y).max(0.0);
                let mut q = p - l * (h / l.y);
                q.y = ground_y;
                q
            })
            .collect(),
    };
    Ok(render(mesh, &flat, cam, &RenderOptions::default())?.coverage())
}

/// Static background plate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundSpec {
    /// Constant color, RGB in `[0, 1]`.
    Solid { color: [f64; 3] },
    /// Checkered floor at `y = 0` and a back wall at `z = -wall_distance`.
    Room {
        floor: [f64; 3],
        wall: [f64; 3],
        wall_distance: f64,
        checker: f64,
    },
    /// 8-bit image with exactly the camera's dimensions.
    Image { path: PathBuf },
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec::Room {
            floor: [0.55, 0.52, 0.48],
            wall: [0.78, 0.80, 0.84],
            wall_distance: 3.0,
            checker: 0.5,
        }
    }
}

fn room_mesh(floor: [f64; 3], wall: [f64; 3], wall_distance: f64, checker: f64) -> Result<(RiggedMesh, PosedMesh)> {
    if !(wall_distance > 0.0 && checker > 0.0) {
        return Err(Error::Asset("room dimensions must be positive".into()));
    }
    let extent = 40.0;
    let tiles = (2.0 * extent / checker).round().max(1.0);
    // Texture: 2x2 floor checker on the left half, flat wall on the right half.
    let to8 = |c: [f64; 3], s: f64| image::Rgb(c.map(|x| (x * s * 255.0).round().clamp(0.0, 255.0) as u8));
    let tex = RgbImage::from_fn(4, 2, |x, y| match x {
        0 | 1 => to8(floor, if (x + y) % 2 == 0 { 1.0 } else { 0.8 }),
        _ => to8(wall, 1.0),
    });
    let d = wall_distance;
    let vertices = vec![
        Vec3::new(-extent, 0.0, -d),
        Vec3::new(extent, 0.0, -d),
        Vec3::new(extent, 0.0, extent),
        Vec3::new(-extent, 0.0, extent),
        Vec3::new(-extent, 0.0, -d),
        Vec3::new(extent, 0.0, -d),
        Vec3::new(extent, extent, -d),
        Vec3::new(-extent, extent, -d),
    ];
    // Floor uvs tile the 2x2 checker cell; the repeat is expanded by
    // subdividing into one quad per checker row so clamping does not smear.
    let mut mesh = RiggedMesh {
        vertices: Vec::new(),
        triangles: Vec::new(),
        uvs: Vec::new(),
        texture: tex,
        skin_weights: Vec::new(),
        part_labels: Vec::new(),
    };
    let n = tiles as usize;
    let z0 = -d;
    let z1 = extent;
    let x0 = -extent;
    let step_x = 2.0 * extent / n as f64;
    let step_z = (z1 - z0) / n as f64;
    for iz in 0..n {
        for ix in 0..n {
            let odd = (ix + iz) % 2 == 1;
            let u = if odd { 0.375 } else { 0.125 };
            let base = mesh.vertices.len() as u32;
            let xa = x0 + ix as f64 * step_x;
            let za = z0 + iz as f64 * step_z;
            for (x, z) in [(xa, za), (xa + step_x, za), (xa + step_x, za + step_z), (xa, za + step_z)] {
                mesh.vertices.push(Vec3::new(x, 0.0, z));
                mesh.uvs.push([u, 0.25]);
                mesh.skin_weights.push(vec![(0, 1.0)]);
            }
            mesh.triangles.push([base, base + 1, base + 2]);
            mesh.triangles.push([base, base + 2, base + 3]);
            mesh.part_labels.extend([BodyPart::Torso.label(); 2]);
        }
    }
    let base = mesh.vertices.len() as u32;
    for v in &vertices[4..] {
        mesh.vertices.push(*v);
        mesh.uvs.push([0.75, 0.5]);
        mesh.skin_weights.push(vec![(0, 1.0)]);
    }
    mesh.triangles.push([base, base + 1, base + 2]);
    mesh.triangles.push([base, base + 2, base + 3]);
    mesh.part_labels.extend([BodyPart::Torso.label(); 2]);
    let posed = mesh.rest_pose();
    Ok((mesh, posed))
}

/// Renders the empty background plate `B`.
pub fn render_background(scene: &BackgroundSpec, cam: &Camera) -> Result<Planes> {
    cam.validate()?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    match scene {
        BackgroundSpec::Solid { color } => {
            let mut out = Planes::filled(3, w, h, 0.0);
            for c in 0..3 {
                out.plane_mut(c).fill((2.0 * color[c] - 1.0) as f32);
            }
            Ok(out)
        }
        BackgroundSpec::Room { floor, wall, wall_distance, checker } => {
            let (mesh, posed) = room_mesh(*floor, *wall, *wall_distance, *checker)?;
            let sky = [0.9f32, 0.92, 0.95].map(|x| 2.0 * x - 1.0);
            let opts = RenderOptions {
                shading: Shading::Unlit,
                background_fill: sky,
            };
            Ok(render(&mesh, &posed, cam, &opts)?.color)
        }
        BackgroundSpec::Image { path } => {
            let img = image::open(path)
                .map_err(|e| Error::Asset(format!("background {}: {e}", path.display())))?
                .to_rgb8();
            if img.width() != cam.width || img.height() != cam.height {
                return Err(Error::Asset(format!(
                    "background {} is {}x{}, camera is {}x{}",
                    path.display(),
                    img.width(),
                    img.height(),
                    cam.width,
                    cam.height
                )));
            }
            Ok(Planes::from_rgb8(&img))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroLengthBones {
    #[default]
    Dot,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonStyle {
    pub line_width: f64,
    pub zero_length: ZeroLengthBones,
}

impl Default for SkeletonStyle {
    fn default() -> Self {
        SkeletonStyle {
            line_width: 2.0,
            zero_length: ZeroLengthBones::Dot,
        }
    }
}

/// Fixed, well separated color of bone `i` (golden-ratio hue walk), `[-1, 1]` RGB.
pub fn bone_color(i: usize) -> [f32; 3] {
    let hue = (i as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let x = 1.0 - ((hue % 2.0) - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|c: f64| (2.0 * (0.15 + 0.85 * c) - 1.0) as f32)
}

/// Draws each bone as a 2D segment between its projected joints. Bones with
/// an endpoint in front of the near plane are skipped. Bones shorter than
/// half a pixel on screen are drawn as a dot or skipped per `style`.
pub fn render_skeleton(skel: &Skeleton, pose: &Pose, cam: &Camera, style: &SkeletonStyle) -> Result<Planes> {
    let positions: Vec<Vec3> = fk_transforms(skel, pose)?
        .iter()
        .map(|t| t.translation.vector)
        .collect();
    render_skeleton_points(skel, &positions, cam, style)
}

/// [`render_skeleton`] from world-space joint positions (one per joint).
pub fn render_skeleton_points(skel: &Skeleton, positions: &[Vec3], cam: &Camera, style: &SkeletonStyle) -> Result<Planes> {
    cam.validate()?;
    if positions.len() != skel.joint_count() {
        return Err(Error::Shape(format!(
            "{} joint positions for {} joints",
            positions.len(),
            skel.joint_count()
        )));
    }
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut out = Planes::filled(3, w, h, -1.0);
    let half = style.line_width / 2.0;
    for (j, joint) in skel.joints().iter().enumerate() {
        let Some(p) = joint.parent else { continue };
        let a = cam.to_camera(&positions[p]);
        let b = cam.to_camera(&positions[j]);
        if a.z < cam.near || b.z < cam.near {
            continue;
        }
        let pa = cam.project(&a);
        let pb = cam.project(&b);
        let len = ((pb.0 - pa.0).powi(2) + (pb.1 - pa.1).powi(2)).sqrt();
        if len < 0.5 && style.zero_length == ZeroLengthBones::Skip {
            continue;
        }
        let color = bone_color(j - 1);
        let x_lo = (pa.0.min(pb.0) - half).floor().max(0.0) as usize;
        let y_lo = (pa.1.min(pb.1) - half).floor().max(0.0) as usize;
        let x_hi = ((pa.0.max(pb.0) + half).ceil().max(0.0) as usize).min(w);
        let y_hi = ((pa.1.max(pb.1) + half).ceil().max(0.0) as usize).min(h);
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                if point_segment_distance(p, pa, pb) <= half {
                    for c in 0..3 {
                        out.set(c, x, y, color[c]);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Six-color visualization of the part labels (uncovered pixels black).
pub fn part_visualization(out: &RenderOutput) -> RgbImage {
    const COLORS: [[u8; 3]; PART_COUNT + 1] = [
        [0, 0, 0],
        [230, 200, 60],
        [60, 120, 230],
        [230, 70, 70],
        [70, 200, 90],
        [170, 80, 210],
        [60, 210, 210],
    ];
    let w = out.width();
    RgbImage::from_fn(w as u32, out.height() as u32, |x, y| {
        image::Rgb(COLORS[out.parts[y as usize * w + x as usize] as usize])
    })
}

/// Point in world space back-projected from pixel `(u, v)` at camera depth `z`.
pub fn unproject(cam: &Camera, u: f64, v: f64, z: f64) -> Vec3 {
    let pc = Vec3::new((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
    let m = cam.extrinsic_matrix();
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t: Vec3 = m.fixed_view::<3, 1>(0, 3).into_owned();
    r.transpose() * (pc - t)
}
