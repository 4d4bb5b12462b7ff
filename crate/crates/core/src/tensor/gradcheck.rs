//! Central finite-difference checks against the tape's analytic gradients.
//! Runs in `f64`; single-precision differences are too noisy for tight
//! tolerances.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` for each index in `coords`.
pub fn central_difference(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    eps: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    if eps <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let plus = f(&probe)?;
            probe.data_mut()[i] = orig - eps;
            let minus = f(&probe)?;
            probe.data_mut()[i] = orig;
            Ok((plus - minus) / (2.0 * eps))
        })
        .collect()
}

/// Evaluates a scalar tape function of `x`, returning the loss value and
/// the analytic gradient with respect to `x`.
pub fn value_and_grad<F>(f: &F, x: &Tensor<f64>) -> Result<(f64, Tensor<f64>)>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_requires_grad(true));
    let loss = f(&mut tape, xv)?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let g = grads
        .get(xv)
        .cloned()
        .ok_or_else(|| Error::invalid("input received no gradient"))?;
    Ok((value, g))
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&mut tape, xv)?;
    tape.value(loss).item()
}

/// Maximum relative error between analytic and central-difference
/// gradients over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_at(f, x, eps, &coords)
}

/// Like [`grad_check`] but restricted to `coords`, e.g. to leave out
/// points where the function is not differentiable.
pub fn grad_check_at<F>(f: F, x: &Tensor<f64>, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let (_, analytic) = value_and_grad(&f, x)?;
    let numeric = central_difference(|p| eval(&f, p), x, eps, coords)?;
    Ok(coords
        .iter()
        .zip(&numeric)
        .map(|(&i, &n)| relative_error(analytic.data()[i], n))
        .fold(0.0, f64::max))
}
