//! AdamW with decoupled weight decay and step learning-rate decay.

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, weight_decay: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> Moments<S> {
    pub fn zeros_like(params: &[Tensor<S>]) -> Self {
        Moments {
            m: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
        }
    }
}

/// One AdamW step:
/// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ` with bias-corrected moments.
pub fn adamw_update<S: Scalar>(
    params: &mut [Tensor<S>],
    grads: &[Tensor<S>],
    moments: &mut Moments<S>,
    cfg: &AdamWConfig,
    step: usize,
) -> Result<()> {
    if step == 0 {
        return Err(Error::param("AdamW step counter starts at 1"));
    }
    if params.len() != grads.len() || params.len() != moments.m.len() || params.len() != moments.v.len() {
        return Err(Error::shape(format!(
            "AdamW got {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            moments.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || moments.m[i].len() != p.numel() || moments.v[i].len() != p.numel() {
            return Err(Error::shape(format!(
                "AdamW parameter {i}: shape {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let (lr, wd, eps) = (S::lit(cfg.lr), S::lit(cfg.weight_decay), S::lit(cfg.eps));
    let c1 = S::one() - S::lit(cfg.beta1.powi(step as i32));
    let c2 = S::one() - S::lit(cfg.beta2.powi(step as i32));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut moments.m[i], &mut moments.v[i]);
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + (S::one() - b1) * gj;
            v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            let old = *theta;
            *theta = old - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * old;
        }
    }
    Ok(())
}

/// `base_lr · factor^(#milestones ≤ epoch)`.
pub fn lr_schedule(base_lr: f64, epoch: usize, milestones: &[usize], factor: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base_lr * factor.powi(passed as i32)
}

/// Milestones every `every` epochs strictly below `total`.
pub fn periodic_milestones(every: usize, total: usize) -> Vec<usize> {
    if every == 0 {
        return Vec::new();
    }
    (1..).map(|k| k * every).take_while(|&m| m < total).collect()
}

/// One row of the training loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn loss_log_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("epoch,step,loss,lr\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.step, r.loss, r.lr));
    }
    out
}

/// Mean loss of each epoch in a log.
pub fn epoch_means(log: &[LossRecord]) -> Vec<f64> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for r in log {
        match out.last_mut() {
            Some((e, sum, n)) if *e == r.epoch => {
                *sum += r.loss;
                *n += 1;
            }
            _ => out.push((r.epoch, r.loss, 1)),
        }
    }
    out.into_iter().map(|(_, s, n)| s / n as f64).collect()
}
