//! Central finite-difference gradient checking, 64-bit only.

use super::tensor::Tensor;
use crate::error::Result;

/// Numeric gradient of `f` with respect to every element of every tensor in
/// `params`, via central differences (f(x+h) - f(x-h)) / 2h.
pub fn central_difference<E>(params: &[Tensor<f64>], h: f64, mut f: E) -> Result<Vec<Tensor<f64>>>
where
    E: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut g = Tensor::zeros(params[i].shape());
        for e in 0..params[i].numel() {
            let orig = params[i].as_slice()[e];
            work[i].as_mut_slice()[e] = orig + h;
            let fp = f(&work)?;
            work[i].as_mut_slice()[e] = orig - h;
            let fm = f(&work)?;
            work[i].as_mut_slice()[e] = orig;
            g.as_mut_slice()[e] = (fp - fm) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Worst-case elementwise error |a - n| / max(1, |a|, |n|).
///
/// The floor of 1 turns the bound into an absolute one for small gradients,
/// where a pure ratio would amplify finite-difference noise around zero.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    debug_assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f64;
    for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
        if err > worst {
            worst = err;
        }
    }
    worst
}
