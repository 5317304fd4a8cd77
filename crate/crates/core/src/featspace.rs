//! Dataset-level feature embeddings and distances between them.
//!
//! The extractor is a frozen random ReLU network: three 3×3 convolutions
//! with 2×2 average pooling between them, then global average pooling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Tape, Tensor};
use crate::nn::{Conv, ParamSet};
use crate::rgbd::RgbdDataset;
use crate::rng;

pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5eed_f00d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Rgb,
    Depth,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Rgb => "rgb",
            Channel::Depth => "depth",
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    seed: u64,
    params: ParamSet<f64>,
    convs: [Conv; 3],
}

impl FeatureExtractor {
    pub const WIDTHS: [usize; 3] = [16, 32, 64];

    pub fn new(seed: u64) -> Self {
        let mut rng = rng::stream(seed, "feature-extractor", 0);
        let mut p = ParamSet::default();
        let [a, b, c] = Self::WIDTHS;
        let convs = [p.conv(3, a, 3, &mut rng), p.conv(a, b, 3, &mut rng), p.conv(b, c, 3, &mut rng)];
        FeatureExtractor { seed, params: p, convs }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        Self::WIDTHS[2]
    }

    /// Pooled features of a `[N,3,H,W]` batch, one row per item.
    pub fn features(&self, x: Tensor<f64>) -> Result<Vec<Vec<f64>>> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape(format!("extractor expects [N,3,H,W], got {shape:?}")));
        }
        if shape[2] % 4 != 0 || shape[3] % 4 != 0 {
            return Err(Error::shape(format!("extractor needs H and W divisible by 4, got {}x{}", shape[3], shape[2])));
        }
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let mut h = tape.constant(x);
        for (i, conv) in self.convs.iter().enumerate() {
            if i > 0 {
                h = tape.avg_pool2(h)?;
            }
            h = conv.apply(&mut tape, &vars, h)?;
            h = tape.relu(h);
        }
        let out = tape.value(h);
        let (c, plane) = (out.shape()[1], out.shape()[2] * out.shape()[3]);
        Ok(out
            .data()
            .chunks_exact(c * plane)
            .map(|item| item.chunks_exact(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect())
            .collect())
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(DEFAULT_EXTRACTOR_SEED)
    }
}

/// Mean pooled feature vector of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source: String,
    pub n_samples: usize,
}

/// Pooled features of every sample; the depth plane is fed as three
/// identical channels.
pub fn sample_features(data: &RgbdDataset, extractor: &FeatureExtractor, channel: Channel) -> Result<Vec<Vec<f64>>> {
    let (w, h) = data.resolution();
    let plane = w * h;
    let idx: Vec<usize> = (0..data.len()).collect();
    let per_chunk: Vec<Result<Vec<Vec<f64>>>> = idx
        .par_chunks(16)
        .map(|chunk| {
            let mut buf = Vec::with_capacity(chunk.len() * 3 * plane);
            for &i in chunk {
                let s = &data.samples()[i];
                match channel {
                    Channel::Rgb => buf.extend(s.rgb().iter().map(|&v| v as f64)),
                    Channel::Depth => {
                        for _ in 0..3 {
                            buf.extend(s.depth().iter().map(|&v| v as f64));
                        }
                    }
                }
            }
            extractor.features(Tensor::new(&[chunk.len(), 3, h, w], buf)?)
        })
        .collect();
    let mut out = Vec::with_capacity(data.len());
    for feats in per_chunk {
        out.extend(feats?);
    }
    Ok(out)
}

/// Mean of the selected rows, summed in index order.
pub fn mean_features(features: &[Vec<f64>], indices: &[usize]) -> Vec<f64> {
    let dim = features.first().map_or(0, Vec::len);
    let mut sum = vec![0.0; dim];
    for &i in indices {
        for (s, v) in sum.iter_mut().zip(&features[i]) {
            *s += v;
        }
    }
    let n = indices.len() as f64;
    sum.into_iter().map(|s| s / n).collect()
}

/// Dataset embedding: the arithmetic mean of [`sample_features`].
pub fn embed_dataset(
    data: &RgbdDataset,
    extractor: &FeatureExtractor,
    channel: Channel,
    source: impl Into<String>,
) -> Result<EmbeddingVector> {
    if data.is_empty() {
        return Err(Error::param("cannot embed an empty dataset"));
    }
    let feats = sample_features(data, extractor, channel)?;
    let idx: Vec<usize> = (0..feats.len()).collect();
    Ok(EmbeddingVector { values: mean_features(&feats, &idx), source: source.into(), n_samples: data.len() })
}

/// Euclidean distances between embeddings of two independent bootstrap
/// resamples of the same feature rows, one value per replicate.
pub fn bootstrap_distances(features: &[Vec<f64>], replicates: usize, seed: u64) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::param("cannot bootstrap an empty feature set"));
    }
    let n = features.len();
    let mut rng = rng::stream(seed, "bootstrap", 0);
    let draw = |rng: &mut rng::Rng| -> Vec<usize> { (0..n).map(|_| rng.random_range(0..n)).collect() };
    (0..replicates)
        .map(|_| {
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            euclidean_distance(&mean_features(features, &a), &mean_features(features, &b))
        })
        .collect()
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Clamps negatives to zero and scales to unit sum.
pub fn to_distribution(v: &[f64]) -> Result<Vec<f64>> {
    let r: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = r.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::UndefinedDistribution("no positive mass after rectification".into()));
    }
    Ok(r.into_iter().map(|x| x / total).collect())
}

/// Hellinger distance between the distributions of [`to_distribution`].
pub fn hellinger_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let (p, q) = (to_distribution(a)?, to_distribution(b)?);
    let s: f64 = p.iter().zip(&q).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum();
    Ok((s / 2.0).sqrt().min(1.0))
}

/// Distance report JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub config_pair: [String; 2],
    pub channel: Channel,
    pub ed: f64,
    pub hd: f64,
    pub n_samples: [usize; 2],
    pub extractor_seed: u64,
}

impl DistanceReport {
    pub fn between(a: &EmbeddingVector, b: &EmbeddingVector, channel: Channel, extractor_seed: u64) -> Result<Self> {
        Ok(DistanceReport {
            config_pair: [a.source.clone(), b.source.clone()],
            channel,
            ed: euclidean_distance(&a.values, &b.values)?,
            hd: hellinger_distance(&a.values, &b.values)?,
            n_samples: [a.n_samples, b.n_samples],
            extractor_seed,
        })
    }
}
