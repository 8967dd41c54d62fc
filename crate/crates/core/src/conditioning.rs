//! Conditioning stacks: the channel-concatenated network input built from a
//! render, and the `.nrcs` file format.
//!
//! Channel layouts (`B` is the background plate, `M_p` the binary part masks,
//! `I_p = I * M_p` and `D_p = D * M_p`):
//!
//! | mode         | C  | layout                          |
//! |--------------|----|---------------------------------|
//! | `skeleton`   | 6  | `[S_rgb | B]`                   |
//! | `rgb_mask`   | 12 | `[I | M_1..M_6 | B]`            |
//! | `rgb_parts`  | 21 | `[I_1..I_6 | B]`                |
//! | `rgbd_mask`  | 13 | `[I | D | M_1..M_6 | B]`        |
//! | `rgbd_parts` | 27 | `[I_1..I_6 | D_1..D_6 | B]`     |
//!
//! Each `I_p` is three consecutive RGB channels. Masked-out pixels hold the
//! fill value: 0 for color, +1 for depth. Mask channels are 0 or 1.
//!
//! File layout, little-endian: `"NRCS"`, `u32` version (1), `u8` mode code,
//! `u32` C, H, W, then `C*H*W` `f32` values, channel-major and row-major
//! within a channel.

use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::charmesh::PART_COUNT;
use crate::error::{Error, Result};
use crate::planes::{to_u8, Planes};
use crate::raster::RenderOutput;

pub const MAGIC: &[u8; 4] = b"NRCS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 12;

pub const COLOR_FILL: f32 = 0.0;
pub const DEPTH_FILL: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    Skeleton,
    RgbMask,
    RgbParts,
    RgbdMask,
    RgbdParts,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 5] = [
        ConditioningMode::Skeleton,
        ConditioningMode::RgbMask,
        ConditioningMode::RgbParts,
        ConditioningMode::RgbdMask,
        ConditioningMode::RgbdParts,
    ];

    pub fn channels(self) -> usize {
        match self {
            ConditioningMode::Skeleton => 6,
            ConditioningMode::RgbMask => 12,
            ConditioningMode::RgbParts => 21,
            ConditioningMode::RgbdMask => 13,
            ConditioningMode::RgbdParts => 27,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ConditioningMode::Skeleton => 0,
            ConditioningMode::RgbMask => 1,
            ConditioningMode::RgbParts => 2,
            ConditioningMode::RgbdMask => 3,
            ConditioningMode::RgbdParts => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<ConditioningMode> {
        ConditioningMode::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ConditioningMode::Skeleton => "skeleton",
            ConditioningMode::RgbMask => "rgb_mask",
            ConditioningMode::RgbParts => "rgb_parts",
            ConditioningMode::RgbdMask => "rgbd_mask",
            ConditioningMode::RgbdParts => "rgbd_parts",
        }
    }

    /// Whether the mode consumes a mesh render (everything but `skeleton`).
    pub fn uses_mesh(self) -> bool {
        self != ConditioningMode::Skeleton
    }
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConditioningMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown conditioning mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningStack {
    pub mode: ConditioningMode,
    pub planes: Planes,
}

impl ConditioningStack {
    pub fn new(mode: ConditioningMode, planes: Planes) -> Result<Self> {
        let s = ConditioningStack { mode, planes };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.planes.channels != self.mode.channels() {
            return Err(Error::Shape(format!(
                "{} stack needs {} channels, has {}",
                self.mode,
                self.mode.channels(),
                self.planes.channels
            )));
        }
        if self.planes.width == 0 || self.planes.height == 0 {
            return Err(Error::Shape("empty stack".into()));
        }
        if let Some(v) = self.planes.data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("stack value {v} outside [-1, 1]")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.planes.width
    }

    pub fn height(&self) -> usize {
        self.planes.height
    }

    /// Serialized `.nrcs` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.planes;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * p.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.mode.code());
        for d in [p.channels, p.height, p.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mode = ConditioningMode::from_code(bytes[8])
            .ok_or_else(|| Error::Format(format!("unknown mode code {}", bytes[8])))?;
        let (c, h, w) = (u32_at(9) as usize, u32_at(13) as usize, u32_at(17) as usize);
        if c != mode.channels() {
            return Err(Error::Format(format!("{mode} stack declares {c} channels")));
        }
        if h == 0 || w == 0 {
            return Err(Error::Format(format!("empty stack {c}x{h}x{w}")));
        }
        let expected = c
            .checked_mul(h)
            .and_then(|n| n.checked_mul(w))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "header {c}x{h}x{w} needs {expected} payload bytes, file has {}",
                payload.len()
            )));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let stack = ConditioningStack { mode, planes: Planes { channels: c, width: w, height: h, data } };
        stack.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(stack)
    }
}

pub fn write_stack(stack: &ConditioningStack, path: &Path) -> Result<()> {
    stack.validate()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&stack.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_stack(path: &Path) -> Result<ConditioningStack> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ConditioningStack::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// What a stack is composed from: a mesh render, or a skeleton drawing for
/// the `skeleton` mode.
#[derive(Debug, Clone, Copy)]
pub enum ConditioningInput<'a> {
    Mesh(&'a RenderOutput),
    Skeleton(&'a Planes),
}

fn check_rgb(p: &Planes, what: &str, w: usize, h: usize) -> Result<()> {
    if p.channels != 3 || p.width != w || p.height != h {
        return Err(Error::Shape(format!(
            "{what} is {}x{}x{}, expected 3x{h}x{w}",
            p.channels, p.height, p.width
        )));
    }
    Ok(())
}

/// Assembles the conditioning stack for `mode`.
pub fn compose(input: ConditioningInput<'_>, bg: &Planes, mode: ConditioningMode) -> Result<ConditioningStack> {
    let (w, h) = match input {
        ConditioningInput::Mesh(r) => (r.width(), r.height()),
        ConditioningInput::Skeleton(s) => (s.width, s.height),
    };
    check_rgb(bg, "background", w, h)?;
    let n = w * h;
    let mut data: Vec<f32> = Vec::with_capacity(mode.channels() * n);

    match (mode, input) {
        (ConditioningMode::Skeleton, ConditioningInput::Skeleton(s)) => {
            check_rgb(s, "skeleton image", w, h)?;
            data.extend_from_slice(&s.data);
        }
        (ConditioningMode::Skeleton, ConditioningInput::Mesh(_)) => {
            return Err(Error::Shape("skeleton mode needs a skeleton image".into()));
        }
        (_, ConditioningInput::Skeleton(_)) => {
            return Err(Error::Shape(format!("{mode} mode needs a mesh render")));
        }
        (_, ConditioningInput::Mesh(r)) => {
            check_rgb(&r.color, "color render", w, h)?;
            if r.depth.channels != 1 || !r.depth.same_size(&r.color) || r.parts.len() != n {
                return Err(Error::Shape("depth or part labels do not match the color render".into()));
            }
            let color = &r.color.data;
            let depth = &r.depth.data;
            let masked = |src: &[f32], label: u8, fill: f32, out: &mut Vec<f32>| {
                out.extend(src.iter().zip(&r.parts).map(|(&v, &p)| if p == label { v } else { fill }));
            };
            let push_masks = |out: &mut Vec<f32>| {
                for label in 1..=PART_COUNT as u8 {
                    out.extend(r.parts.iter().map(|&p| if p == label { 1.0 } else { 0.0 }));
                }
            };
            let push_color_parts = |out: &mut Vec<f32>| {
                for label in 1..=PART_COUNT as u8 {
                    for c in 0..3 {
                        masked(&color[c * n..(c + 1) * n], label, COLOR_FILL, out);
                    }
                }
            };
            match mode {
                ConditioningMode::RgbMask => {
                    data.extend_from_slice(color);
                    push_masks(&mut data);
                }
                ConditioningMode::RgbParts => push_color_parts(&mut data),
                ConditioningMode::RgbdMask => {
                    data.extend_from_slice(color);
                    data.extend_from_slice(depth);
                    push_masks(&mut data);
                }
                ConditioningMode::RgbdParts => {
                    push_color_parts(&mut data);
                    for label in 1..=PART_COUNT as u8 {
                        masked(depth, label, DEPTH_FILL, &mut data);
                    }
                }
                ConditioningMode::Skeleton => unreachable!(),
            }
        }
    }
    data.extend_from_slice(&bg.data);
    ConditioningStack::new(mode, Planes::from_data(mode.channels(), w, h, data)?)
}

/// Grayscale contact sheet of every channel, tiled `cols` wide with a 1 px
/// separator. Mask channels map `0 -> 128`, `1 -> 255`.
pub fn contact_sheet(stack: &ConditioningStack, cols: usize) -> GrayImage {
    let p = &stack.planes;
    let cols = cols.clamp(1, p.channels);
    let rows = p.channels.div_ceil(cols);
    let (tw, th) = (p.width + 1, p.height + 1);
    let mut img = GrayImage::from_pixel((cols * tw - 1) as u32, (rows * th - 1) as u32, Luma([32]));
    for c in 0..p.channels {
        let (ox, oy) = ((c % cols) * tw, (c / cols) * th);
        for y in 0..p.height {
            for x in 0..p.width {
                img.put_pixel((ox + x) as u32, (oy + y) as u32, Luma([to_u8(p.get(c, x, y))]));
            }
        }
    }
    img
}

pub fn write_contact_sheet(stack: &ConditioningStack, path: &Path) -> Result<()> {
    contact_sheet(stack, 6).save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}
