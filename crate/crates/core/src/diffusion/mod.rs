//! Four-channel DDPM: ε-prediction training and ancestral sampling.
//!
//! Samples live in `[0,1]`; the model works on `2x − 1` so the data is
//! centred like the unit Gaussian it is diffused into.

mod checkpoint;
mod config;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::denoiser::DenoiserNet;
use crate::error::{Error, Result};
use crate::ndgrad::{Tape, Tensor, Var};
use crate::optim::{adamw_update, lr_schedule, AdamWConfig, Moments};
pub use crate::optim::{epoch_means, loss_log_csv, LossRecord};
use crate::rgbd::{Provenance, RgbdDataset, RgbdSample};
use crate::rng;
use crate::scalar::Scalar;
use crate::schedules::BetaSchedule;

pub use checkpoint::{read_checkpoint, write_checkpoint, DiffusionCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DiffusionConfig, Preset, VarianceKind, DESK_RESOLUTIONS, FULL_SCALE_EPOCHS, FULL_SCALE_LR, FULL_SCALE_MILESTONES};

/// A trainable ε̂(x_t, t).
pub trait NoisePredictor<S: Scalar> {
    fn parameters(&self) -> &[Tensor<S>];

    fn parameters_mut(&mut self) -> &mut [Tensor<S>];

    /// `params` are [`NoisePredictor::parameters`] registered on `tape`, in order.
    fn predict_noise(&self, tape: &mut Tape<S>, params: &[Var], x_t: Var, t: &[usize]) -> Result<Var>;
}

impl<S: Scalar> NoisePredictor<S> for DenoiserNet<S> {
    fn parameters(&self) -> &[Tensor<S>] {
        self.params().tensors()
    }

    fn parameters_mut(&mut self) -> &mut [Tensor<S>] {
        self.params_mut().tensors_mut()
    }

    fn predict_noise(&self, tape: &mut Tape<S>, params: &[Var], x_t: Var, t: &[usize]) -> Result<Var> {
        self.forward(tape, params, x_t, t)
    }
}

pub(crate) fn to_model_space<S: Scalar>(v: S) -> S {
    v + v - S::one()
}

pub(crate) fn from_model_space<S: Scalar>(v: S) -> S {
    (v + S::one()) * S::lit(0.5)
}

/// Model, optimizer moments and bookkeeping of a training run.
pub struct TrainState<S, M> {
    pub model: M,
    pub moments: Moments<S>,
    pub optimizer: AdamWConfig,
    /// Completed optimizer steps.
    pub step: usize,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
}

impl<S: Scalar, M: NoisePredictor<S>> TrainState<S, M> {
    pub fn new(model: M, optimizer: AdamWConfig) -> Self {
        let moments = Moments::zeros_like(model.parameters());
        TrainState { model, moments, optimizer, step: 0, epoch: 0, loss_history: Vec::new() }
    }
}

/// One optimizer step on a `[N,4,H,W]` batch of `[0,1]` samples.
///
/// Draws `t ~ U{1..T}` per item, noises the batch in closed form, and
/// applies the configured loss between the true and predicted noise.
pub fn train_step<S: Scalar, M: NoisePredictor<S>>(
    state: &mut TrainState<S, M>,
    cfg: &DiffusionConfig,
    sched: &BetaSchedule<S>,
    batch: &Tensor<S>,
    rng: &mut rng::Rng,
) -> Result<f64> {
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != 4 {
        return Err(Error::shape(format!("diffusion batch must be [N,4,H,W], got {shape:?}")));
    }
    if batch.data().iter().any(|&v| !(v >= S::zero() && v <= S::one())) {
        return Err(Error::param("diffusion batch values must lie in [0, 1]"));
    }
    let n = shape[0];
    let per_item = batch.numel() / n;
    let steps = sched.steps();
    let ts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=steps)).collect();
    let noise: Vec<S> = (0..batch.numel()).map(|_| S::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    let mut noisy = Vec::with_capacity(batch.numel());
    for (i, &t) in ts.iter().enumerate() {
        let (a, s) = sched.marginal_unchecked(t);
        let range = i * per_item..(i + 1) * per_item;
        for (&x0, &e) in batch.data()[range.clone()].iter().zip(&noise[range]) {
            noisy.push(a * to_model_space(x0) + s * e);
        }
    }

    let mut tape = Tape::new();
    let params: Vec<Var> = state.model.parameters().iter().map(|p| tape.param(p.clone())).collect();
    let x_t = tape.constant(Tensor::new(shape, noisy)?);
    let target = tape.constant(Tensor::new(shape, noise)?);
    let pred = state.model.predict_noise(&mut tape, &params, x_t, &ts)?;
    let loss_var = tape.loss(cfg.loss, pred, target)?;
    let loss = tape.value(loss_var).item().as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: state.step + 1, t: ts.iter().copied().max().unwrap_or(0), loss });
    }
    tape.backward(loss_var)?;
    let grads: Vec<Tensor<S>> = params
        .iter()
        .map(|&p| tape.grad(p).cloned().expect("parameters require grad"))
        .collect();
    state.step += 1;
    adamw_update(state.model.parameters_mut(), &grads, &mut state.moments, &state.optimizer, state.step)?;
    state.loss_history.push(loss);
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl TrainOptions {
    /// CPU-sized defaults.
    pub fn desk(epochs: usize) -> Self {
        TrainOptions { epochs, batch_size: 16, base_lr: 1e-3, milestones: FULL_SCALE_MILESTONES.to_vec(), decay: 0.1 }
    }
}

/// Runs `opts.epochs` epochs over `data` and returns the per-step log.
/// Batches are reshuffled every epoch from a stream derived from `cfg.seed`.
pub fn train<S: Scalar, M: NoisePredictor<S>>(
    state: &mut TrainState<S, M>,
    cfg: &DiffusionConfig,
    sched: &BetaSchedule<S>,
    data: &RgbdDataset,
    opts: &TrainOptions,
) -> Result<Vec<LossRecord>> {
    if data.is_empty() {
        return Err(Error::param("cannot train on an empty dataset"));
    }
    if data.resolution() != cfg.resolution {
        return Err(Error::shape(format!(
            "dataset is {}x{}, configuration expects {}x{}",
            data.width(),
            data.height(),
            cfg.resolution.0,
            cfg.resolution.1
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    let mut log = Vec::new();
    for _ in 0..opts.epochs {
        let epoch = state.epoch;
        let lr = lr_schedule(opts.base_lr, epoch, &opts.milestones, opts.decay);
        state.optimizer.lr = lr;
        let mut rng = rng::stream(cfg.seed, "diffusion-train", epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size) {
            let batch = data.rgbd_batch::<S>(chunk);
            let loss = train_step(state, cfg, sched, &batch, &mut rng)?;
            log.push(LossRecord { epoch, step: state.step, loss, lr });
        }
        state.epoch += 1;
    }
    Ok(log)
}


/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`, clamped to `[0,1]`.
///
/// Each step forms the `x_0` estimate implied by the predicted noise, clips it
/// to `[-1,1]`, and draws from the Gaussian posterior `q(x_{t-1} | x_t, x_0)`.
pub fn sample<S: Scalar, M: NoisePredictor<S>>(
    cfg: &DiffusionConfig,
    sched: &BetaSchedule<S>,
    model: &M,
    count: usize,
    rng: &mut rng::Rng,
) -> Result<Tensor<S>> {
    if count == 0 {
        return Err(Error::param("sample count must be at least 1"));
    }
    let (w, h) = cfg.resolution;
    let shape = [count, 4, h, w];
    let n: usize = shape.iter().product();
    let mut x: Vec<S> = (0..n).map(|_| S::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    for t in (1..=sched.steps()).rev() {
        let eps = {
            let mut tape = Tape::new();
            let params: Vec<Var> = model.parameters().iter().map(|p| tape.constant(p.clone())).collect();
            let xv = tape.constant(Tensor::new(&shape, x.clone())?);
            let out = model.predict_noise(&mut tape, &params, xv, &vec![t; count])?;
            tape.value(out).data().to_vec()
        };
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { t });
        }
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar_prev(t);
        let (sqrt_ab, sqrt_1m_ab) = (ab.sqrt(), (S::one() - ab).sqrt());
        let c0 = sched.beta(t) * ab_prev.sqrt() / (S::one() - ab);
        let ct = (S::one() - ab_prev) * sched.alpha(t).sqrt() / (S::one() - ab);
        let sigma = match cfg.variance {
            VarianceKind::Posterior => sched.posterior_variance(t).sqrt(),
            VarianceKind::Beta => sched.beta(t).sqrt(),
        };
        for (xi, &ei) in x.iter_mut().zip(&eps) {
            let x0 = ((*xi - sqrt_1m_ab * ei) / sqrt_ab).max(-S::one()).min(S::one());
            let mut v = c0 * x0 + ct * *xi;
            if t > 1 {
                v += sigma * S::lit(rng.sample::<f64, _>(StandardNormal));
            }
            *xi = v;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { t });
        }
    }
    let out = x.into_iter().map(|v| from_model_space(v).max(S::zero()).min(S::one())).collect();
    Tensor::new(&shape, out)
}

/// Samples per shard in [`generate_dataset`]; fixed so output does not
/// depend on the worker count.
pub const SHARD_SIZE: usize = 16;

/// Generates `count` samples in shards of [`SHARD_SIZE`], each shard drawing
/// from its own `(seed, shard)` stream. Shards run on the ambient rayon pool.
pub fn generate_dataset<S: Scalar, M: NoisePredictor<S> + Sync>(
    cfg: &DiffusionConfig,
    sched: &BetaSchedule<S>,
    model: &M,
    count: usize,
    seed: u64,
    max_depth_m: f32,
    provenance: Provenance,
) -> Result<RgbdDataset> {
    if count == 0 {
        return Err(Error::param("sample count must be at least 1"));
    }
    let (w, h) = cfg.resolution;
    let shards: Vec<(usize, usize)> =
        (0..count.div_ceil(SHARD_SIZE)).map(|i| (i, SHARD_SIZE.min(count - i * SHARD_SIZE))).collect();
    let results: Vec<Result<Tensor<S>>> = shards
        .par_iter()
        .map(|&(i, n)| sample(cfg, sched, model, n, &mut rng::stream(seed, "generate", i as u64)))
        .collect();
    let mut ds = RgbdDataset::new(w, h, max_depth_m);
    let per = 4 * w * h;
    for ((shard, _), res) in shards.iter().zip(results) {
        let batch = res?;
        for (j, chunk) in batch.data().chunks(per).enumerate() {
            let planes = chunk.iter().map(|v| v.as_f32()).collect();
            let sample_seed = rng::derive_seed(seed, "generate-sample", (shard * SHARD_SIZE + j) as u64);
            ds.push(RgbdSample::from_clamped(w, h, planes, max_depth_m, provenance)?.with_seed(sample_seed))?;
        }
    }
    Ok(ds)
}
