use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth depths below this many meters are left out of AbsRel and δ.
pub const VALIDITY_FLOOR_M: f64 = 1e-3;

const THRESHOLD: f64 = 1.25;

/// Depth-estimation errors; `rmse` and `mae` in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub abs_rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    /// Pooled metrics over paired ground-truth and predicted depths in meters.
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        if y.len() != y_hat.len() {
            return Err(Error::shape(format!("{} targets against {} predictions", y.len(), y_hat.len())));
        }
        let mut acc = MetricAccumulator::default();
        for (&a, &b) in y.iter().zip(y_hat) {
            acc.add(a, b);
        }
        acc.finish()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub samples: usize,
    pub pixels: usize,
    /// Pixels at or above [`VALIDITY_FLOOR_M`].
    pub valid_pixels: usize,
}

/// Metrics JSON: the six metric fields followed by `counts`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub metrics: DepthMetrics,
    pub counts: MetricCounts,
}

/// Running sums for pooled metrics; pixels are added in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    sq_err: f64,
    abs_err: f64,
    pixels: usize,
    rel_err: f64,
    valid: usize,
    hits: [usize; 3],
}

impl MetricAccumulator {
    pub fn add(&mut self, y: f64, y_hat: f64) {
        let d = y - y_hat;
        self.sq_err += d * d;
        self.abs_err += d.abs();
        self.pixels += 1;
        if y >= VALIDITY_FLOOR_M {
            self.valid += 1;
            self.rel_err += d.abs() / y;
            if y_hat > 0.0 {
                let ratio = (y / y_hat).max(y_hat / y);
                let mut thr = THRESHOLD;
                for h in &mut self.hits {
                    if ratio < thr {
                        *h += 1;
                    }
                    thr *= THRESHOLD;
                }
            }
        }
    }

    pub fn finish(&self) -> Result<DepthMetrics> {
        if self.pixels == 0 {
            return Err(Error::Evaluation("no pixels to evaluate".into()));
        }
        if self.valid == 0 {
            return Err(Error::Evaluation(format!("no ground-truth depth at or above {VALIDITY_FLOOR_M} m")));
        }
        let n = self.pixels as f64;
        let v = self.valid as f64;
        Ok(DepthMetrics {
            rmse: (self.sq_err / n).sqrt(),
            mae: self.abs_err / n,
            abs_rel: self.rel_err / v,
            delta1: self.hits[0] as f64 / v,
            delta2: self.hits[1] as f64 / v,
            delta3: self.hits[2] as f64 / v,
        })
    }

    pub fn report(&self, samples: usize) -> Result<MetricsReport> {
        Ok(MetricsReport {
            metrics: self.finish()?,
            counts: MetricCounts { samples, pixels: self.pixels, valid_pixels: self.valid },
        })
    }
}

/// Per-pixel `|ŷ − y|` of two depth planes in meters, with its maximum.
pub fn difference_map(y: &[f32], y_hat: &[f32]) -> Result<(Vec<f32>, f32)> {
    if y.len() != y_hat.len() {
        return Err(Error::shape(format!("difference of planes with {} and {} pixels", y.len(), y_hat.len())));
    }
    let map: Vec<f32> = y.iter().zip(y_hat).map(|(&a, &b)| (b - a).abs()).collect();
    let max = map.iter().copied().fold(0.0, f32::max);
    Ok((map, max))
}
