//! Time-conditioned U-Net predicting the injected noise of a 4-channel
//! RGBD sample.

use crate::error::{Error, Result};
use crate::ndgrad::{Tape, Tensor, Var};
use crate::nn::{Conv, Linear, ParamSet};
use crate::rng;
use crate::scalar::Scalar;

pub const CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub widths: [usize; 3],
    pub time_dim: usize,
    pub steps: usize,
}

impl DenoiserConfig {
    pub fn new(steps: usize) -> Self {
        DenoiserConfig { widths: [16, 32, 64], time_dim: 32, steps }
    }
}

/// Sinusoidal features `[sin(t·ω_0), cos(t·ω_0), sin(t·ω_1), …]` with
/// `ω_k = 10000^(−2k/dim)`.
pub fn time_embedding(t: usize, dim: usize, steps: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::param(format!("time embedding dimension must be even, got {dim}")));
    }
    if t == 0 || t > steps {
        return Err(Error::param(format!("timestep {t} outside 1..={steps}")));
    }
    Ok(sinusoid(t as f64, dim))
}

pub(crate) fn sinusoid(t: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        out.push((t * omega).sin());
        out.push((t * omega).cos());
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct Block {
    conv_a: Conv,
    time: Linear,
    conv_b: Conv,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    time1: Linear,
    time2: Linear,
    stem: Conv,
    enc0: Block,
    enc1: Block,
    mid: Block,
    dec1: Block,
    dec0: Block,
    head: Conv,
}

/// ε̂(x_t, t): two pooling stages, a bottleneck, and two upsampling stages
/// with skip connections; the time embedding enters every block as a
/// per-channel bias.
#[derive(Clone, Debug)]
pub struct DenoiserNet<S> {
    config: DenoiserConfig,
    params: ParamSet<S>,
    layout: Layout,
}

impl<S: Scalar> DenoiserNet<S> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "denoiser-init", 0);
        let mut p = ParamSet::default();
        let [c0, c1, c2] = config.widths;
        let hidden = 2 * config.time_dim;
        let mut block = |p: &mut ParamSet<S>, cin: usize, cout: usize| Block {
            conv_a: p.conv(cin, cout, 3, &mut rng),
            time: p.linear(hidden, cout, &mut rng),
            conv_b: p.conv(cout, cout, 3, &mut rng),
        };
        let mut rng2 = rng::stream(seed, "denoiser-init", 1);
        let time1 = p.linear(config.time_dim, hidden, &mut rng2);
        let time2 = p.linear(hidden, hidden, &mut rng2);
        let stem = p.conv(CHANNELS, c0, 3, &mut rng2);
        let enc0 = block(&mut p, c0, c0);
        let enc1 = block(&mut p, c0, c1);
        let mid = block(&mut p, c1, c2);
        let dec1 = block(&mut p, c2 + c1, c1);
        let dec0 = block(&mut p, c1 + c0, c0);
        let head = p.zero_conv(c0, CHANNELS, 3);
        let layout = Layout { time1, time2, stem, enc0, enc1, mid, dec1, dec0, head };
        DenoiserNet { config, params: p, layout }
    }

    pub fn config(&self) -> &DenoiserConfig {
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

    pub fn cast<T: Scalar>(&self) -> DenoiserNet<T> {
        DenoiserNet { config: self.config, params: self.params.cast(), layout: self.layout }
    }

    fn block(&self, tape: &mut Tape<S>, vars: &[Var], b: &Block, x: Var, temb: Var) -> Result<Var> {
        let h = b.conv_a.apply(tape, vars, x)?;
        let bias = b.time.apply(tape, vars, temb)?;
        let h = tape.add_channel_bias(h, bias)?;
        let h = tape.silu(h);
        let h = b.conv_b.apply(tape, vars, h)?;
        Ok(tape.silu(h))
    }

    /// Predicts the noise for `x_t` of shape `[N,4,H,W]`; `vars` are this
    /// network's parameters registered on `tape` (see [`ParamSet::register`]).
    pub fn forward(&self, tape: &mut Tape<S>, vars: &[Var], x_t: Var, t: &[usize]) -> Result<Var> {
        let shape = tape.value(x_t).shape().to_vec();
        if shape.len() != 4 || shape[1] != CHANNELS {
            return Err(Error::shape(format!("denoiser expects [N,4,H,W], got {shape:?}")));
        }
        if shape[2] % 4 != 0 || shape[3] % 4 != 0 {
            return Err(Error::shape(format!(
                "denoiser needs H and W divisible by 4, got {}x{}",
                shape[3], shape[2]
            )));
        }
        if t.len() != shape[0] {
            return Err(Error::shape(format!("{} timesteps for a batch of {}", t.len(), shape[0])));
        }
        let dim = self.config.time_dim;
        let mut feats = Vec::with_capacity(t.len() * dim);
        for &ti in t {
            feats.extend(time_embedding(ti, dim, self.config.steps)?.into_iter().map(S::lit));
        }
        let l = &self.layout;
        let temb = tape.constant(Tensor::new(&[t.len(), dim], feats)?);
        let temb = l.time1.apply(tape, vars, temb)?;
        let temb = tape.silu(temb);
        let temb = l.time2.apply(tape, vars, temb)?;
        let temb = tape.silu(temb);

        let h = l.stem.apply(tape, vars, x_t)?;
        let e0 = self.block(tape, vars, &l.enc0, h, temb)?;
        let d = tape.avg_pool2(e0)?;
        let e1 = self.block(tape, vars, &l.enc1, d, temb)?;
        let d = tape.avg_pool2(e1)?;
        let m = self.block(tape, vars, &l.mid, d, temb)?;
        let u = tape.upsample2(m)?;
        let u = tape.concat_channels(u, e1)?;
        let u = self.block(tape, vars, &l.dec1, u, temb)?;
        let u = tape.upsample2(u)?;
        let u = tape.concat_channels(u, e0)?;
        let u = self.block(tape, vars, &l.dec0, u, temb)?;
        l.head.apply(tape, vars, u)
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, x_t: Tensor<S>, t: &[usize]) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let x = tape.constant(x_t);
        let out = self.forward(&mut tape, &vars, x, t)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::{grad_check_at, LossKind};
    use rand::{Rng, SeedableRng};

    #[test]
    fn embedding_at_zero_alternates() {
        let e = sinusoid(0.0, 8);
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(time_embedding(0, 8, 10).is_err());
        assert!(time_embedding(3, 7, 10).is_err());
        assert!(time_embedding(11, 8, 10).is_err());
    }

    #[test]
    fn embedding_norm_bounded() {
        for t in 1..=1000 {
            let e = time_embedding(t, 32, 1000).unwrap();
            let n: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= (32f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn embeddings_distinct_over_full_range() {
        let all: Vec<Vec<f64>> = (1..=1000).map(|t| time_embedding(t, 32, 1000).unwrap()).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let d: f64 = all[i].iter().zip(&all[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(d > 0.0, "collision between t={} and t={}", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn zero_head_predicts_zero_and_preserves_shape() {
        let net = DenoiserNet::<f64>::new(DenoiserConfig::new(200), 1);
        let mut rng = rng::stream(1, "test", 0);
        let x = Tensor::from_fn(&[2, 4, 16, 12], |_| rng.random_range(-1.0..1.0));
        let y = net.predict(x, &[1, 150]).unwrap();
        assert_eq!(y.shape(), &[2, 4, 16, 12]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indivisible_resolution() {
        let net = DenoiserNet::<f64>::new(DenoiserConfig::new(200), 1);
        let err = net.predict(Tensor::zeros(&[1, 4, 10, 12]), &[3]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(net.predict(Tensor::zeros(&[1, 3, 16, 12]), &[3]).is_err());
        assert!(net.predict(Tensor::zeros(&[1, 4, 16, 12]), &[0]).is_err());
    }

    #[test]
    fn parameter_budget() {
        let net = DenoiserNet::<f32>::new(DenoiserConfig::new(1000), 0);
        assert!(net.param_count() <= 500_000, "{}", net.param_count());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut net = DenoiserNet::<f64>::new(DenoiserConfig::new(50), 3);
        randomize_head(&mut net, 4);
        let x = Tensor::from_fn(&[1, 4, 8, 8], |i| (i as f64 * 0.1).sin());
        assert_eq!(net.predict(x.clone(), &[7]).unwrap(), net.predict(x, &[7]).unwrap());
    }

    fn randomize_head(net: &mut DenoiserNet<f64>, seed: u64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let head = net.layout.head;
        for idx in [head.kernel, head.bias] {
            for v in net.params.tensors_mut()[idx].data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }

    #[test]
    fn gradient_check_through_input() {
        let mut net = DenoiserNet::<f64>::new(DenoiserConfig { widths: [4, 6, 8], time_dim: 8, steps: 20 }, 5);
        randomize_head(&mut net, 6);
        let mut rng = rng::stream(2, "test", 0);
        let x = Tensor::from_fn(&[1, 4, 8, 8], |_| rng.random_range(-1.0..1.0));
        let target = Tensor::from_fn(&[1, 4, 8, 8], |_| rng.random_range(-1.0..1.0));
        let f = |tape: &mut Tape<f64>, xv: Var| {
            let vars = net.params.register(tape, false);
            let y = net.forward(tape, &vars, xv, &[9])?;
            let t = tape.constant(target.clone());
            tape.loss(LossKind::L2, y, t)
        };
        let coords: Vec<usize> = (0..x.numel()).step_by(7).collect();
        let err = grad_check_at(f, &x, 1e-5, &coords).unwrap();
        assert!(err <= 1e-5, "{err}");
    }
}
