//! Parameter storage and layer helpers shared by the networks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndgrad::{Tape, Tensor, Var};
use crate::rng;
use crate::scalar::Scalar;

/// Indices of a convolution's kernel and bias in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub kernel: usize,
    pub bias: usize,
    pub pad: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

/// Ordered list of parameter tensors. The order is the serialization order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S> {
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        ParamSet { tensors: Vec::new() }
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    fn push(&mut self, t: Tensor<S>) -> usize {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Uniform init in `±√(3/fan_in)`, zero bias.
    fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut rng::Rng) -> Tensor<S> {
        let bound = (3.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| S::lit(rng.random_range(-bound..bound)))
    }

    pub fn conv(&mut self, cin: usize, cout: usize, k: usize, rng: &mut rng::Rng) -> Conv {
        let kernel = self.push(Self::fan_in_uniform(&[cout, cin, k, k], cin * k * k, rng));
        let bias = self.push(Tensor::zeros(&[cout]));
        Conv { kernel, bias, pad: k / 2 }
    }

    pub fn zero_conv(&mut self, cin: usize, cout: usize, k: usize) -> Conv {
        let kernel = self.push(Tensor::zeros(&[cout, cin, k, k]));
        let bias = self.push(Tensor::zeros(&[cout]));
        Conv { kernel, bias, pad: k / 2 }
    }

    pub fn linear(&mut self, fin: usize, fout: usize, rng: &mut rng::Rng) -> Linear {
        let weight = self.push(Self::fan_in_uniform(&[fout, fin], fin, rng));
        let bias = self.push(Tensor::zeros(&[fout]));
        Linear { weight, bias }
    }

    /// Registers every tensor on the tape, in order.
    pub fn register(&self, tape: &mut Tape<S>, requires_grad: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect()
    }

    /// Replaces all values from a flat blob in parameter order.
    pub fn load_flat(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::shape(format!(
                "parameter blob has {} values, network expects {}",
                flat.len(),
                self.count()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            for (dst, &src) in t.data_mut().iter_mut().zip(&flat[off..off + n]) {
                *dst = S::from_f32v(src);
            }
            off += n;
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f32> {
        self.tensors.iter().flat_map(|t| t.data().iter().map(|v| v.as_f32())).collect()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet { tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

impl Conv {
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, vars: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, vars[self.kernel], vars[self.bias], 1, self.pad)
    }
}

impl Linear {
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, vars: &[Var], x: Var) -> Result<Var> {
        tape.linear(x, vars[self.weight], vars[self.bias])
    }
}
