//! Procedural RGBD scenes: a sloped far wall plus axis-aligned boxes at
//! nearer depths. Color hue is a fixed function of depth, so color and
//! depth are correlated the way a depth estimator needs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::{Provenance, RgbdDataset, RgbdSample};

const SATURATION: f32 = 0.7;
const VALUE: f32 = 0.8;
const HUE_SPAN: f32 = 0.75;
const TEXTURE_AMPLITUDE: f32 = 0.05;

/// Depth ranges, in normalized units, for the pieces of a scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    /// Range for the wall depth at the top row.
    pub wall_top: (f32, f32),
    /// Range for the wall depth at the bottom row.
    pub wall_bottom: (f32, f32),
    pub objects: (f32, f32),
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams { wall_top: (0.75, 1.0), wall_bottom: (0.45, 0.7), objects: (0.1, 0.4) }
    }
}

impl SceneParams {
    /// Every range multiplied by `k`.
    pub fn scaled(k: f32) -> Self {
        let d = Self::default();
        let s = |(a, b): (f32, f32)| (a * k, b * k);
        SceneParams { wall_top: s(d.wall_top), wall_bottom: s(d.wall_bottom), objects: s(d.objects) }
    }

    fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.wall_top, self.wall_bottom, self.objects] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::param(format!("depth range ({lo}, {hi}) must lie inside [0, 1]")));
            }
        }
        if self.wall_bottom.1 >= self.wall_top.0 {
            return Err(Error::param("wall bottom must be strictly nearer than wall top"));
        }
        Ok(())
    }
}

/// Axis-aligned box, `[x0, x0+w) × [y0, y0+h)`, at constant depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
    pub depth: f32,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }
}

pub fn hue_for_depth(depth: f32) -> f32 {
    HUE_SPAN * depth
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// HSV hue in `[0, 1)` of an RGB triple; 0 for greys.
pub fn rgb_to_hue(rgb: [f32; 3]) -> f32 {
    let [r, g, b] = rgb.map(|v| v as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h / 6.0) as f32
}

fn uniform(rng: &mut rng::Rng, (lo, hi): (f32, f32)) -> f32 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Scene with default depth ranges, tagged as original data.
pub fn synth_scene(res: (usize, usize), n_shapes: usize, seed: u64, max_depth_m: f32) -> Result<RgbdSample> {
    synth_scene_with_layout(res, n_shapes, seed, max_depth_m, &SceneParams::default()).map(|(s, _)| s)
}

/// Scene plus the rectangles drawn into it, in drawing order (later boxes
/// occlude earlier ones).
pub fn synth_scene_with_layout(
    res: (usize, usize),
    n_shapes: usize,
    seed: u64,
    max_depth_m: f32,
    params: &SceneParams,
) -> Result<(RgbdSample, Vec<Rect>)> {
    let (w, h) = res;
    if w < 2 || h < 2 {
        return Err(Error::param(format!("scene resolution {w}x{h} too small")));
    }
    params.validate()?;
    let mut rng = rng::stream(seed, "synth-scene", 0);
    let top = uniform(&mut rng, params.wall_top);
    let bottom = uniform(&mut rng, params.wall_bottom);
    let mut depth: Vec<f32> = (0..h)
        .flat_map(|y| {
            let d = top + (bottom - top) * (y as f32 / (h - 1) as f32);
            std::iter::repeat_n(d, w)
        })
        .collect();

    let mut rects = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let rw = rng.random_range((w / 6).max(1)..=(w / 2).max(1));
        let rh = rng.random_range((h / 6).max(1)..=(h / 2).max(1));
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        let d = uniform(&mut rng, params.objects);
        let rect = Rect { x0, y0, w: rw, h: rh, depth: d };
        for y in y0..y0 + rh {
            depth[y * w + x0..y * w + x0 + rw].iter_mut().for_each(|v| *v = d);
        }
        rects.push(rect);
    }

    let n = w * h;
    let mut planes = vec![0.0f32; 4 * n];
    for i in 0..n {
        let base = hsv_to_rgb(hue_for_depth(depth[i]), SATURATION, VALUE);
        let texture = rng.random_range(-TEXTURE_AMPLITUDE..TEXTURE_AMPLITUDE);
        for c in 0..3 {
            planes[c * n + i] = (base[c] + texture).clamp(0.0, 1.0);
        }
        planes[3 * n + i] = depth[i];
    }
    let sample = RgbdSample::new(w, h, planes, max_depth_m, Provenance::Original)?.with_seed(seed);
    Ok((sample, rects))
}

/// `count` scenes with per-sample seeds derived from `seed`; each scene has
/// between 1 and `max_shapes` boxes.
pub fn synth_dataset(
    count: usize,
    res: (usize, usize),
    max_shapes: usize,
    seed: u64,
    max_depth_m: f32,
    params: &SceneParams,
) -> Result<RgbdDataset> {
    let mut ds = RgbdDataset::new(res.0, res.1, max_depth_m);
    let mut picker = rng::stream(seed, "synth-shapes", 0);
    for i in 0..count {
        let sample_seed = rng::derive_seed(seed, "synth-sample", i as u64);
        let shapes = if max_shapes == 0 { 0 } else { picker.random_range(1..=max_shapes) };
        let (s, _) = synth_scene_with_layout(res, shapes, sample_seed, max_depth_m, params)?;
        ds.push(s)?;
    }
    Ok(ds)
}
