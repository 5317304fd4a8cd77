//! Colormapped depth and difference images, written as binary PPM.

use std::path::Path;

use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::rgbd::RgbdSample;

/// Colormap anchors at positions 0, 0.25, 0.5, 0.75 and 1.
pub const ANCHORS: [[u8; 3]; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];

/// 256-entry table, linearly interpolated between [`ANCHORS`] and rounded.
pub fn colormap_lut() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    for (i, entry) in lut.iter_mut().enumerate() {
        let x = i as f64 / 255.0;
        let k = ((x * 4.0).floor() as usize).min(3);
        let f = x * 4.0 - k as f64;
        for c in 0..3 {
            let (a, b) = (ANCHORS[k][c] as f64, ANCHORS[k + 1][c] as f64);
            entry[c] = (a + f * (b - a)).round() as u8;
        }
    }
    lut
}

/// Nearest table entry for a value in `[0,1]`; out-of-range values clamp and
/// NaN maps to the first entry.
pub fn lut_index(v: f32) -> usize {
    if v.is_nan() {
        return 0;
    }
    ((v.clamp(0.0, 1.0) as f64) * 255.0).round() as usize
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB bytes, row-major.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_ppm())
    }
}

/// Maps a plane of `[0,1]` values through the colormap.
pub fn colorize(plane: &[f32], width: usize, height: usize) -> Result<Image> {
    if plane.len() != width * height {
        return Err(Error::shape(format!("{} values for a {width}x{height} image", plane.len())));
    }
    let lut = colormap_lut();
    let pixels = plane.iter().flat_map(|&v| lut[lut_index(v)]).collect();
    Ok(Image { width, height, pixels })
}

pub fn render_rgb(sample: &RgbdSample) -> Image {
    let n = sample.width() * sample.height();
    let (r, g, b) = (sample.plane(0), sample.plane(1), sample.plane(2));
    let to_byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let pixels = (0..n).flat_map(|i| [to_byte(r[i]), to_byte(g[i]), to_byte(b[i])]).collect();
    Image { width: sample.width(), height: sample.height(), pixels }
}

pub fn render_depth(sample: &RgbdSample) -> Image {
    colorize(sample.depth(), sample.width(), sample.height()).expect("sample planes match resolution")
}

/// Colormapped difference map scaled by its own maximum.
pub fn render_difference(map: &[f32], max: f32, width: usize, height: usize) -> Result<Image> {
    let scaled: Vec<f32> = if max > 0.0 { map.iter().map(|&v| v / max).collect() } else { vec![0.0; map.len()] };
    colorize(&scaled, width, height)
}
