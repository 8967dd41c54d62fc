//! Channel-major `f32` images in the normalized `[-1, 1]` range.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// `channels x height x width` values, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Planes {
    pub fn filled(channels: usize, width: usize, height: usize, value: f32) -> Planes {
        Planes {
            channels,
            width,
            height,
            data: vec![value; channels * width * height],
        }
    }

    pub fn from_data(channels: usize, width: usize, height: usize, data: Vec<f32>) -> Result<Planes> {
        if data.len() != channels * width * height {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Planes { channels, width, height, data })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[self.index(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        let i = self.index(c, x, y);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_size(&self, other: &Planes) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Converts an 8-bit RGB image with `v / 127.5 - 1`.
    pub fn from_rgb8(img: &RgbImage) -> Planes {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Planes::filled(3, w, h, 0.0);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, x as usize, y as usize, px[c] as f32 / 127.5 - 1.0);
            }
        }
        out
    }

    /// 8-bit RGB preview of channels `first..first + 3`.
    pub fn to_rgb8(&self, first: usize) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Rgb([0, 1, 2].map(|c| to_u8(self.get(first + c, x as usize, y as usize))))
        })
    }

    pub fn to_gray8(&self, channel: usize) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([to_u8(self.get(channel, x as usize, y as usize))])
        })
    }

    pub fn save_rgb_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8(0).save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// `[-1, 1] -> [0, 255]` by `round(127.5 * (v + 1))`, clamped.
#[inline]
pub fn to_u8(v: f32) -> u8 {
    (127.5 * (v as f64 + 1.0)).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_endpoints() {
        assert_eq!(to_u8(-1.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(0.0), 128);
        assert_eq!(to_u8(7.0), 255);
    }

    #[test]
    fn rgb8_roundtrip() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 50, y as u8 * 100, 255]));
        let p = Planes::from_rgb8(&img);
        assert_eq!(p.to_rgb8(0), img);
    }
}
