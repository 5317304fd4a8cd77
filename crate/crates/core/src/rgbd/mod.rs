//! RGBD samples and datasets.
//!
//! A sample is four `[0,1]` planes (R, G, B, depth) of equal size. Depth is
//! normalized by the dataset's physical maximum depth, so
//! `meters = depth · max_depth_m`.

mod io;
mod merge;
mod resize;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::scalar::Scalar;

pub use io::{read_dataset, read_manifest, write_dataset, write_manifest, ManifestRecord, MAGIC, VERSION};
pub use merge::merge_s3;
pub use resize::{crop_plane, preprocess, resize_plane};
pub use synth::{hue_for_depth, rgb_to_hue, synth_dataset, synth_scene, synth_scene_with_layout, Rect, SceneParams};

pub const INDOOR_MAX_DEPTH_M: f32 = 10.0;
pub const OUTDOOR_MAX_DEPTH_M: f32 = 80.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    S1,
    S2,
}

impl Provenance {
    pub fn tag(self) -> u8 {
        match self {
            Provenance::Original => 0,
            Provenance::S1 => 1,
            Provenance::S2 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::S1 => "s1",
            Provenance::S2 => "s2",
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Provenance::Original),
            1 => Some(Provenance::S1),
            2 => Some(Provenance::S2),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbdSample {
    width: usize,
    height: usize,
    planes: Vec<f32>,
    max_depth_m: f32,
    pub provenance: Provenance,
    /// Seed of the generator stream that produced the sample, when known.
    pub seed: Option<u64>,
}

fn check_unit(values: &[f32]) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::param(format!("plane value {v} at index {i} is outside [0, 1]")));
    }
    Ok(())
}

impl RgbdSample {
    /// `planes` holds R, G, B and depth planes back to back, each `height × width`.
    pub fn new(width: usize, height: usize, planes: Vec<f32>, max_depth_m: f32, provenance: Provenance) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("sample resolution must be non-zero"));
        }
        if planes.len() != 4 * width * height {
            return Err(Error::shape(format!(
                "{}x{} RGBD sample needs {} values, got {}",
                width,
                height,
                4 * width * height,
                planes.len()
            )));
        }
        if !(max_depth_m > 0.0 && max_depth_m.is_finite()) {
            return Err(Error::param(format!("max depth must be positive, got {max_depth_m}")));
        }
        check_unit(&planes)?;
        Ok(RgbdSample { width, height, planes, max_depth_m, provenance, seed: None })
    }

    /// Builds a sample from unconstrained values, clamping into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, mut planes: Vec<f32>, max_depth_m: f32, provenance: Provenance) -> Result<Self> {
        for v in &mut planes {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(width, height, planes, max_depth_m, provenance)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn max_depth_m(&self) -> f32 {
        self.max_depth_m
    }

    pub fn planes(&self) -> &[f32] {
        &self.planes
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.planes[c * n..(c + 1) * n]
    }

    pub fn rgb(&self) -> &[f32] {
        &self.planes[..3 * self.width * self.height]
    }

    pub fn depth(&self) -> &[f32] {
        self.plane(3)
    }

    pub fn depth_meters(&self, i: usize) -> f32 {
        self.depth()[i] * self.max_depth_m
    }

    pub fn mean_depth(&self) -> f64 {
        let d = self.depth();
        d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64
    }
}

/// Ordered samples sharing one resolution and maximum depth.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdDataset {
    width: usize,
    height: usize,
    max_depth_m: f32,
    samples: Vec<RgbdSample>,
}

impl RgbdDataset {
    pub fn new(width: usize, height: usize, max_depth_m: f32) -> Self {
        RgbdDataset { width, height, max_depth_m, samples: Vec::new() }
    }

    pub fn from_samples(width: usize, height: usize, max_depth_m: f32, samples: Vec<RgbdSample>) -> Result<Self> {
        let mut ds = Self::new(width, height, max_depth_m);
        for s in samples {
            ds.push(s)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, sample: RgbdSample) -> Result<()> {
        if sample.resolution() != self.resolution() || sample.max_depth_m != self.max_depth_m {
            return Err(Error::Capacity(format!(
                "sample {}x{} @ {} m does not match dataset {}x{} @ {} m",
                sample.width, sample.height, sample.max_depth_m, self.width, self.height, self.max_depth_m
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn max_depth_m(&self) -> f32 {
        self.max_depth_m
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[RgbdSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<RgbdSample> {
        self.samples
    }

    pub fn count_of(&self, p: Provenance) -> usize {
        self.samples.iter().filter(|s| s.provenance == p).count()
    }

    /// Stacks the selected samples' channels `[first, first+count)` into `[N,count,H,W]`.
    pub fn batch<S: Scalar>(&self, indices: &[usize], first: usize, count: usize) -> Tensor<S> {
        let plane = self.width * self.height;
        let mut data = Vec::with_capacity(indices.len() * count * plane);
        for &i in indices {
            let s = &self.samples[i];
            data.extend(s.planes[first * plane..(first + count) * plane].iter().map(|&v| S::from_f32v(v)));
        }
        Tensor::new(&[indices.len(), count, self.height, self.width], data).expect("consistent batch shape")
    }

    /// All four planes, `[N,4,H,W]`.
    pub fn rgbd_batch<S: Scalar>(&self, indices: &[usize]) -> Tensor<S> {
        self.batch(indices, 0, 4)
    }

    pub fn rgb_batch<S: Scalar>(&self, indices: &[usize]) -> Tensor<S> {
        self.batch(indices, 0, 3)
    }

    pub fn depth_batch<S: Scalar>(&self, indices: &[usize]) -> Tensor<S> {
        self.batch(indices, 3, 1)
    }
}
