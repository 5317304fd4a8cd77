use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Compares the tape gradient of a scalar function against central finite
/// differences on every coordinate of `x`.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`.
pub fn grad_check<S, F>(f: F, x: &Tensor<S>, eps: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_at(f, x, eps, &coords)
}

/// Same as [`grad_check`] restricted to the listed flat coordinates.
pub fn grad_check_at<S, F>(f: F, x: &Tensor<S>, eps: S, coords: &[usize]) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    let analytic = tape.grad(xv).expect("leaf created with requires_grad").clone();

    let eval = |probe: Tensor<S>| -> Result<S> {
        let mut tape = Tape::new();
        let v = tape.constant(probe);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item())
    };

    let two_eps = eps + eps;
    let mut worst = S::zero();
    for &i in coords {
        if i >= x.numel() {
            return Err(Error::param(format!("coordinate {i} out of range for {} elements", x.numel())));
        }
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / two_eps;
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(S::one());
        if err > worst || err.is_nan() {
            worst = err;
        }
    }
    Ok(worst)
}
