//! Toy encoder-decoder depth estimator: RGB in, normalized depth out.

mod checkpoint;
mod metrics;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ndgrad::{LossKind, Tape, Tensor, Var};
use crate::nn::{Conv, ParamSet};
use crate::optim::{adamw_update, lr_schedule, periodic_milestones, AdamWConfig, LossRecord, Moments};
use crate::rgbd::{crop_plane, resize_plane, RgbdDataset};
use crate::rng;
use crate::scalar::Scalar;

pub use checkpoint::{read_mde_checkpoint, write_mde_checkpoint, MdeCheckpoint, MDE_MAGIC, MDE_VERSION};
pub use metrics::{difference_map, DepthMetrics, MetricAccumulator, MetricCounts, MetricsReport, VALIDITY_FLOOR_M};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MdeConfig {
    pub widths: [usize; 3],
}

impl Default for MdeConfig {
    fn default() -> Self {
        MdeConfig { widths: [16, 32, 64] }
    }
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    enc0: Conv,
    enc1: Conv,
    enc2: Conv,
    dec1: Conv,
    dec0: Conv,
    head: Conv,
}

/// Three encoder stages separated by 2×2 average pooling, two decoder
/// stages with nearest upsampling and skip connections, sigmoid head.
#[derive(Clone, Debug)]
pub struct MdeNet<S> {
    config: MdeConfig,
    params: ParamSet<S>,
    layout: Layout,
}

impl<S: Scalar> MdeNet<S> {
    pub fn new(config: MdeConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "mde-init", 0);
        let mut p = ParamSet::default();
        let [c0, c1, c2] = config.widths;
        let layout = Layout {
            enc0: p.conv(3, c0, 3, &mut rng),
            enc1: p.conv(c0, c1, 3, &mut rng),
            enc2: p.conv(c1, c2, 3, &mut rng),
            dec1: p.conv(c2 + c1, c1, 3, &mut rng),
            dec0: p.conv(c1 + c0, c0, 3, &mut rng),
            head: p.conv(c0, 1, 3, &mut rng),
        };
        MdeNet { config, params: p, layout }
    }

    pub fn config(&self) -> &MdeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<T: Scalar>(&self) -> MdeNet<T> {
        MdeNet { config: self.config, params: self.params.cast(), layout: self.layout }
    }

    /// `[N,3,H,W]` RGB to `[N,1,H,W]` depth in `[0,1]`.
    pub fn forward(&self, tape: &mut Tape<S>, vars: &[Var], rgb: Var) -> Result<Var> {
        let shape = tape.value(rgb).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape(format!("depth estimator expects [N,3,H,W], got {shape:?}")));
        }
        if shape[2] % 4 != 0 || shape[3] % 4 != 0 {
            return Err(Error::shape(format!(
                "depth estimator needs H and W divisible by 4, got {}x{}",
                shape[3], shape[2]
            )));
        }
        let l = &self.layout;
        let e0 = l.enc0.apply(tape, vars, rgb)?;
        let e0 = tape.silu(e0);
        let d = tape.avg_pool2(e0)?;
        let e1 = l.enc1.apply(tape, vars, d)?;
        let e1 = tape.silu(e1);
        let d = tape.avg_pool2(e1)?;
        let e2 = l.enc2.apply(tape, vars, d)?;
        let e2 = tape.silu(e2);
        let u = tape.upsample2(e2)?;
        let u = tape.concat_channels(u, e1)?;
        let u = l.dec1.apply(tape, vars, u)?;
        let u = tape.silu(u);
        let u = tape.upsample2(u)?;
        let u = tape.concat_channels(u, e0)?;
        let u = l.dec0.apply(tape, vars, u)?;
        let u = tape.silu(u);
        let out = l.head.apply(tape, vars, u)?;
        Ok(tape.sigmoid(out))
    }

    pub fn predict(&self, rgb: Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let x = tape.constant(rgb);
        let out = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdeTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

pub const MDE_LR: f64 = 1e-3;
pub const MDE_DECAY_EVERY: usize = 20;
pub const MDE_EPOCHS: usize = 80;

impl MdeTrainOptions {
    /// lr `1e-3` decayed by `0.1` every 20 epochs, weight decay `1e-2`.
    pub fn new(epochs: usize, seed: u64) -> Self {
        MdeTrainOptions {
            epochs,
            batch_size: 16,
            base_lr: MDE_LR,
            milestones: periodic_milestones(MDE_DECAY_EVERY, epochs),
            decay: 0.1,
            weight_decay: 1e-2,
            seed,
        }
    }
}

/// Side lengths of a window covering 7/8 of a `w × h` plane.
pub fn crop_size(w: usize, h: usize) -> (usize, usize) {
    let k = (7.0f64 / 8.0).sqrt();
    (((w as f64 * k).round() as usize).clamp(1, w), ((h as f64 * k).round() as usize).clamp(1, h))
}

/// Random horizontal flip (p = 0.5) followed by a random 7/8-area crop
/// resized back to `w × h`. Applied identically to all planes of `planes`.
pub fn augment(planes: &[f32], w: usize, h: usize, rng: &mut rng::Rng) -> Vec<f32> {
    let plane = w * h;
    let flip = rng.random_bool(0.5);
    let (cw, ch) = crop_size(w, h);
    let x0 = rng.random_range(0..=w - cw);
    let y0 = rng.random_range(0..=h - ch);
    let mut out = Vec::with_capacity(planes.len());
    for src in planes.chunks_exact(plane) {
        let mut p = src.to_vec();
        if flip {
            for row in p.chunks_exact_mut(w) {
                row.reverse();
            }
        }
        let c = crop_plane(&p, w, x0, y0, cw, ch);
        out.extend(resize_plane(&c, cw, ch, w, h));
    }
    out
}

/// Augmented `(rgb, depth)` batch for the given sample indices.
pub fn augmented_batch<S: Scalar>(
    data: &RgbdDataset,
    indices: &[usize],
    rng: &mut rng::Rng,
) -> (Tensor<S>, Tensor<S>) {
    let (w, h) = data.resolution();
    let plane = w * h;
    let mut rgb = Vec::with_capacity(indices.len() * 3 * plane);
    let mut depth = Vec::with_capacity(indices.len() * plane);
    for &i in indices {
        let a = augment(data.samples()[i].planes(), w, h, rng);
        rgb.extend(a[..3 * plane].iter().map(|&v| S::from_f32v(v)));
        depth.extend(a[3 * plane..].iter().map(|&v| S::from_f32v(v)));
    }
    let n = indices.len();
    (
        Tensor::new(&[n, 3, h, w], rgb).expect("consistent batch shape"),
        Tensor::new(&[n, 1, h, w], depth).expect("consistent batch shape"),
    )
}

/// Trains with AdamW on the L1 error of normalized depth. Returns the
/// per-step log.
pub fn train_mde<S: Scalar>(net: &mut MdeNet<S>, data: &RgbdDataset, opts: &MdeTrainOptions) -> Result<Vec<LossRecord>> {
    if data.is_empty() {
        return Err(Error::param("cannot train on an empty dataset"));
    }
    if opts.batch_size == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    let mut cfg = AdamWConfig { weight_decay: opts.weight_decay, ..AdamWConfig::default() };
    let mut moments = Moments::zeros_like(net.params().tensors());
    let mut step = 0;
    let mut log = Vec::new();
    for epoch in 0..opts.epochs {
        let lr = lr_schedule(opts.base_lr, epoch, &opts.milestones, opts.decay);
        cfg.lr = lr;
        let mut rng = rng::stream(opts.seed, "mde-train", epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size) {
            let (rgb, depth) = augmented_batch::<S>(data, chunk, &mut rng);
            let mut tape = Tape::new();
            let vars = net.params().register(&mut tape, true);
            let x = tape.constant(rgb);
            let target = tape.constant(depth);
            let pred = net.forward(&mut tape, &vars, x)?;
            let loss_var = tape.loss(LossKind::L1, pred, target)?;
            let loss = tape.value(loss_var).item().as_f64();
            step += 1;
            if !loss.is_finite() {
                return Err(Error::NonFiniteDepthLoss { step, epoch, loss });
            }
            tape.backward(loss_var)?;
            let grads: Vec<Tensor<S>> =
                vars.iter().map(|&v| tape.grad(v).cloned().expect("parameters require grad")).collect();
            adamw_update(net.params_mut().tensors_mut(), &grads, &mut moments, &cfg, step)?;
            log.push(LossRecord { epoch, step, loss, lr });
        }
    }
    Ok(log)
}

/// Normalized depth prediction for every sample, each `H × W` at the test
/// resolution. With `working` set, RGB is resized to that resolution before
/// the forward pass and the prediction is resized back.
pub fn predict_depths<S: Scalar>(
    net: &MdeNet<S>,
    data: &RgbdDataset,
    working: Option<(usize, usize)>,
) -> Result<Vec<Vec<f32>>> {
    let (w, h) = data.resolution();
    let (ww, wh) = working.unwrap_or((w, h));
    let chunks: Vec<&[crate::rgbd::RgbdSample]> = data.samples().chunks(16).collect();
    let out: Vec<Result<Vec<Vec<f32>>>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut rgb = Vec::with_capacity(chunk.len() * 3 * ww * wh);
            for s in chunk.iter() {
                for c in 0..3 {
                    rgb.extend(resize_plane(s.plane(c), w, h, ww, wh).into_iter().map(S::from_f32v));
                }
            }
            let pred = net.predict(Tensor::new(&[chunk.len(), 3, wh, ww], rgb)?)?;
            Ok(pred
                .data()
                .chunks_exact(ww * wh)
                .map(|p| {
                    let p: Vec<f32> = p.iter().map(|v| v.as_f32()).collect();
                    resize_plane(&p, ww, wh, w, h)
                })
                .collect())
        })
        .collect();
    let mut preds = Vec::with_capacity(data.len());
    for r in out {
        preds.extend(r?);
    }
    Ok(preds)
}

/// Metrics in meters over all pixels of `data`, pooled.
pub fn evaluate<S: Scalar>(net: &MdeNet<S>, data: &RgbdDataset, working: Option<(usize, usize)>) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Evaluation("empty test set".into()));
    }
    let preds = predict_depths(net, data, working)?;
    let scale = data.max_depth_m() as f64;
    let mut acc = MetricAccumulator::default();
    for (s, p) in data.samples().iter().zip(&preds) {
        for (&y, &yh) in s.depth().iter().zip(p) {
            acc.add(y as f64 * scale, yh as f64 * scale);
        }
    }
    acc.report(data.len())
}
