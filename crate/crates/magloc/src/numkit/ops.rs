//! Layer-granular forward and backward kernels.
//!
//! Accumulation order is part of the contract: every output element of
//! `conv1d_forward` starts at its bias and gains terms in (input channel,
//! tap) lexicographic order, so the result is bit-equal to a naive
//! nested-loop convolution at the same precision.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Zero padding applied on each side for a same-length dilated convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
}

/// Same-padding split. Symmetric puts the extra zero (odd totals) on the
/// right; causal puts everything on the left so output t sees no future.
pub fn same_padding(kernel: usize, dilation: usize, causal: bool) -> Padding {
    let total = dilation * (kernel - 1);
    if causal {
        Padding { left: total, right: 0 }
    } else {
        Padding { left: total / 2, right: total - total / 2 }
    }
}

fn conv_shapes<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: &Tensor<F>,
    dilation: usize,
) -> Result<(usize, usize, usize, usize)> {
    if input.rank() != 2 {
        return Err(Error::Shape(format!("conv1d input rank {} != 2", input.rank())));
    }
    if weights.rank() != 3 {
        return Err(Error::Shape(format!("conv1d weights rank {} != 3", weights.rank())));
    }
    let (c_in, len) = (input.shape()[0], input.shape()[1]);
    let (c_out, w_cin, k) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    if w_cin != c_in {
        return Err(Error::Shape(format!(
            "conv1d: weights expect {} input channels, input has {}",
            w_cin, c_in
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv1d: bias shape {:?}, expected [{}]",
            bias.shape(),
            c_out
        )));
    }
    if dilation == 0 {
        return Err(Error::Shape("conv1d: dilation must be >= 1".into()));
    }
    Ok((c_in, len, c_out, k))
}

/// Dilated same-length 1D convolution.
///
/// input [C_in x L], weights [C_out x C_in x k], bias [C_out] -> [C_out x L].
/// out[c,t] = bias[c] + sum_{i,j} weights[c,i,j] * padded_input[i, t + j*dilation].
pub fn conv1d_forward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: &Tensor<F>,
    dilation: usize,
    pad: Padding,
) -> Result<Tensor<F>> {
    let (c_in, len, c_out, k) = conv_shapes(input, weights, bias, dilation)?;
    let mut out = Tensor::zeros(&[c_out, len]);
    let w = weights.as_slice();
    for co in 0..c_out {
        let b = bias.as_slice()[co];
        let orow = out.row_mut(co);
        for v in orow.iter_mut() {
            *v = b;
        }
        for ci in 0..c_in {
            let xrow = input.row(ci);
            for j in 0..k {
                let wv = w[(co * c_in + ci) * k + j];
                // padded index t + j*dilation maps to input index t + offset
                let offset = j * dilation;
                let (t0, t1, x0) = tap_range(len, offset, pad.left);
                let orow = &mut out.row_mut(co)[t0..t1];
                let xseg = &xrow[x0..x0 + (t1 - t0)];
                for (o, x) in orow.iter_mut().zip(xseg) {
                    *o = *o + wv * *x;
                }
            }
        }
    }
    Ok(out)
}

/// Valid output range [t0, t1) for one tap, plus the input index aligned with
/// t0. Outside the range the padded input is zero and contributes nothing.
/// Empty ranges come back as (0, 0, 0).
fn tap_range(len: usize, offset: usize, left: usize) -> (usize, usize, usize) {
    // input index = t + offset - left; need 0 <= index < len and 0 <= t < len
    let t0 = left.saturating_sub(offset);
    let t1 = (len + left).saturating_sub(offset).min(len);
    if t1 <= t0 {
        return (0, 0, 0);
    }
    (t0, t1, t0 + offset - left)
}

/// Gradients of `conv1d_forward` with respect to input, weights, and bias.
pub fn conv1d_backward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    dilation: usize,
    pad: Padding,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (c_in, len) = (input.shape()[0], input.shape()[1]);
    let (c_out, k) = (weights.shape()[0], weights.shape()[2]);
    if grad_out.shape() != [c_out, len] {
        return Err(Error::Shape(format!(
            "conv1d backward: grad shape {:?}, expected [{}, {}]",
            grad_out.shape(),
            c_out,
            len
        )));
    }
    let mut grad_input = Tensor::zeros(&[c_in, len]);
    let mut grad_weights = Tensor::zeros(&[c_out, c_in, k]);
    let mut grad_bias = Tensor::zeros(&[c_out]);
    let w = weights.as_slice();
    let gw = grad_weights.as_mut_slice();
    for co in 0..c_out {
        let grow = grad_out.row(co);
        let mut gb = F::zero();
        for g in grow {
            gb = gb + *g;
        }
        grad_bias.as_mut_slice()[co] = gb;
        for ci in 0..c_in {
            let xrow = input.row(ci);
            for j in 0..k {
                let offset = j * dilation;
                let (t0, t1, x0) = tap_range(len, offset, pad.left);
                if t1 <= t0 {
                    continue;
                }
                let gseg = &grow[t0..t1];
                let xseg = &xrow[x0..x0 + (t1 - t0)];
                gw[(co * c_in + ci) * k + j] = gw[(co * c_in + ci) * k + j] + dot(gseg, xseg);
                let wv = w[(co * c_in + ci) * k + j];
                let girow = &mut grad_input.row_mut(ci)[x0..x0 + (t1 - t0)];
                for (gi, g) in girow.iter_mut().zip(gseg) {
                    *gi = *gi + wv * *g;
                }
            }
        }
    }
    Ok((grad_input, grad_weights, grad_bias))
}

/// Dot product in eight independent lanes folded pairwise at the end. The
/// lane split is a fixed reduction order chosen so the loop vectorizes; it
/// is part of the deterministic gradient contract.
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut lanes = [F::zero(); 8];
    let n8 = a.len() - a.len() % 8;
    for (ca, cb) in a[..n8].chunks_exact(8).zip(b[..n8].chunks_exact(8)) {
        for l in 0..8 {
            lanes[l] = lanes[l] + ca[l] * cb[l];
        }
    }
    for i in n8..a.len() {
        lanes[i - n8] = lanes[i - n8] + a[i] * b[i];
    }
    let q = [lanes[0] + lanes[4], lanes[1] + lanes[5], lanes[2] + lanes[6], lanes[3] + lanes[7]];
    (q[0] + q[2]) + (q[1] + q[3])
}

pub fn relu_forward<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    let mut out = input.clone();
    for v in out.as_mut_slice() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
    out
}

/// d relu / dx is 1 where the forward input was > 0, else 0.
pub fn relu_backward<F: Scalar>(input: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape("relu backward: shape mismatch".into()));
    }
    let mut grad = grad_out.clone();
    for (g, x) in grad.as_mut_slice().iter_mut().zip(input.as_slice()) {
        if *x <= F::zero() {
            *g = F::zero();
        }
    }
    Ok(grad)
}

/// Affine layer: y = W x + b with x [n], W [m x n], b [m] -> y [m].
pub fn dense_forward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: &Tensor<F>,
) -> Result<Tensor<F>> {
    if input.rank() != 1 || weights.rank() != 2 {
        return Err(Error::Shape("dense: input must be rank 1, weights rank 2".into()));
    }
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if input.shape() != [n] || bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "dense: W [{m} x {n}] with x {:?}, b {:?}",
            input.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[m]);
    let x = input.as_slice();
    for r in 0..m {
        let wrow = weights.row(r);
        let mut acc = bias.as_slice()[r];
        for (w, xv) in wrow.iter().zip(x) {
            acc = acc + *w * *xv;
        }
        out.as_mut_slice()[r] = acc;
    }
    Ok(out)
}

pub fn dense_backward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if grad_out.shape() != [m] {
        return Err(Error::Shape("dense backward: grad shape mismatch".into()));
    }
    let mut grad_input = Tensor::zeros(&[n]);
    let mut grad_weights = Tensor::zeros(&[m, n]);
    let x = input.as_slice();
    let g = grad_out.as_slice();
    for r in 0..m {
        let gv = g[r];
        let wrow = weights.row(r);
        let gwrow = grad_weights.row_mut(r);
        for c in 0..n {
            gwrow[c] = gv * x[c];
        }
        let gi = grad_input.as_mut_slice();
        for c in 0..n {
            gi[c] = gi[c] + gv * wrow[c];
        }
    }
    Ok((grad_input, grad_weights, grad_out.clone()))
}

/// Mean over time of each channel: [C x L] -> [C].
pub fn global_avg_pool_forward<F: Scalar>(input: &Tensor<F>) -> Result<Tensor<F>> {
    if input.rank() != 2 {
        return Err(Error::Shape("global_avg_pool: input must be rank 2".into()));
    }
    let (c, len) = (input.shape()[0], input.shape()[1]);
    let inv = F::one() / F::from_f64(len as f64);
    let mut out = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut acc = F::zero();
        for v in input.row(ch) {
            acc = acc + *v;
        }
        out.as_mut_slice()[ch] = acc * inv;
    }
    Ok(out)
}

pub fn global_avg_pool_backward<F: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (c, len) = (input_shape[0], input_shape[1]);
    if grad_out.shape() != [c] {
        return Err(Error::Shape("global_avg_pool backward: grad shape mismatch".into()));
    }
    let inv = F::one() / F::from_f64(len as f64);
    let mut grad = Tensor::zeros(&[c, len]);
    for ch in 0..c {
        let gv = grad_out.as_slice()[ch] * inv;
        for v in grad.row_mut(ch) {
            *v = gv;
        }
    }
    Ok(grad)
}

/// Mean squared error over all elements.
pub fn mse_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<F> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape("mse: shape mismatch".into()));
    }
    let inv = F::one() / F::from_f64(pred.numel() as f64);
    let mut acc = F::zero();
    for (p, t) in pred.as_slice().iter().zip(target.as_slice()) {
        let d = *p - *t;
        acc = acc + d * d;
    }
    Ok(acc * inv)
}

/// d mse / d pred = 2 (pred - target) / n, scaled by the upstream gradient.
pub fn mse_backward<F: Scalar>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    upstream: F,
) -> Result<Tensor<F>> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape("mse backward: shape mismatch".into()));
    }
    let two = F::from_f64(2.0);
    let inv = F::one() / F::from_f64(pred.numel() as f64);
    let mut grad = pred.clone();
    for (g, t) in grad.as_mut_slice().iter_mut().zip(target.as_slice()) {
        *g = two * (*g - *t) * inv * upstream;
    }
    Ok(grad)
}

/// Total element count across a set of parameter tensors.
pub fn count_params<F: Scalar>(params: &[&Tensor<F>]) -> usize {
    params.iter().map(|t| t.numel()).sum()
}

/// Mean absolute error over all elements (metric only, not differentiated).
pub fn mae_metric<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<F> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape("mae: shape mismatch".into()));
    }
    let inv = F::one() / F::from_f64(pred.numel() as f64);
    let mut acc = F::zero();
    for (p, t) in pred.as_slice().iter().zip(target.as_slice()) {
        acc = acc + (*p - *t).abs();
    }
    Ok(acc * inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_params_closed_forms() {
        // conv k=3, 3 -> 32 channels
        let w = Tensor::<f32>::zeros(&[32, 3, 3]);
        let b = Tensor::<f32>::zeros(&[32]);
        assert_eq!(count_params(&[&w, &b]), 320);
        // dense 128 -> 64 plus dense 64 -> 2
        let w1 = Tensor::<f32>::zeros(&[64, 128]);
        let b1 = Tensor::<f32>::zeros(&[64]);
        let w2 = Tensor::<f32>::zeros(&[2, 64]);
        let b2 = Tensor::<f32>::zeros(&[2]);
        assert_eq!(count_params(&[&w1, &b1, &w2, &b2]), 8386);
    }

    /// Direct-sum convolution oracle: materialize the zero-padded input and
    /// run the definition verbatim. Written before the fast path.
    fn conv1d_oracle(
        input: &Tensor<f32>,
        weights: &Tensor<f32>,
        bias: &Tensor<f32>,
        dilation: usize,
        pad: Padding,
    ) -> Tensor<f32> {
        let (c_in, len) = (input.shape()[0], input.shape()[1]);
        let (c_out, k) = (weights.shape()[0], weights.shape()[2]);
        let padded_len = pad.left + len + pad.right;
        let mut padded = vec![0.0f32; c_in * padded_len];
        for ci in 0..c_in {
            for t in 0..len {
                padded[ci * padded_len + pad.left + t] = input.row(ci)[t];
            }
        }
        let mut out = Tensor::zeros(&[c_out, len]);
        for co in 0..c_out {
            for t in 0..len {
                let mut acc = bias.as_slice()[co];
                for ci in 0..c_in {
                    for j in 0..k {
                        let w = weights.as_slice()[(co * c_in + ci) * k + j];
                        acc += w * padded[ci * padded_len + t + j * dilation];
                    }
                }
                out.row_mut(co)[t] = acc;
            }
        }
        out
    }

    fn filled(shape: &[usize], f: impl Fn(usize) -> f32) -> Tensor<f32> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::from_vec(&[1, 5], vec![1.0f32, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1], vec![1.0f32]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0f32]).unwrap();
        let y = conv1d_forward(&x, &w, &b, 1, same_padding(1, 1, false)).unwrap();
        assert_eq!(y.as_slice(), x.as_slice());
    }

    #[test]
    fn dilated_box_kernel_matches_oracle() {
        let x = Tensor::from_vec(&[1, 4], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3], vec![1.0f32, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0f32]).unwrap();
        let pad = same_padding(3, 2, false);
        let y = conv1d_forward(&x, &w, &b, 2, pad).unwrap();
        let want = conv1d_oracle(&x, &w, &b, 2, pad);
        assert_eq!(y.as_slice(), want.as_slice());
        // k=3 d=2 symmetric pad: taps at t-2, t, t+2
        assert_eq!(y.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_input_yields_bias_everywhere() {
        let x = Tensor::<f32>::zeros(&[2, 7]);
        let w = filled(&[3, 2, 5], |i| (i as f32) * 0.1 - 1.0);
        let b = Tensor::from_vec(&[3], vec![0.5f32, -1.25, 2.0]).unwrap();
        let y = conv1d_forward(&x, &w, &b, 2, same_padding(5, 2, false)).unwrap();
        for co in 0..3 {
            for v in y.row(co) {
                assert_eq!(*v, b.as_slice()[co]);
            }
        }
    }

    #[test]
    fn conv_matches_oracle_exactly_across_grid() {
        for &k in &[1usize, 3, 5, 20] {
            for &d in &[1usize, 2, 64] {
                for &c in &[1usize, 2, 3] {
                    for &l in &[1usize, 5, 200] {
                        for &causal in &[false, true] {
                            let x = filled(&[c, l], |i| ((i * 37 + 11) % 19) as f32 * 0.37 - 3.0);
                            let w =
                                filled(&[c + 1, c, k], |i| ((i * 53 + 7) % 23) as f32 * 0.19 - 2.0);
                            let b = filled(&[c + 1], |i| i as f32 * 0.5 - 0.7);
                            let pad = same_padding(k, d, causal);
                            let y = conv1d_forward(&x, &w, &b, d, pad).unwrap();
                            let want = conv1d_oracle(&x, &w, &b, d, pad);
                            assert_eq!(
                                y.as_slice(),
                                want.as_slice(),
                                "k={k} d={d} c={c} l={l} causal={causal}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 5]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        assert!(conv1d_forward(&x, &w, &b, 1, same_padding(3, 1, false)).is_err());
    }

    #[test]
    fn causal_padding_sees_no_future() {
        // impulse at the start: causal response must be zero before t=0 only
        let x = Tensor::from_vec(&[1, 6], vec![0.0f32, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3], vec![1.0f32, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0f32]).unwrap();
        let y = conv1d_forward(&x, &w, &b, 1, same_padding(3, 1, true)).unwrap();
        // taps at t-2, t-1, t: the impulse at 3 shows up at t = 3, 4, 5
        assert_eq!(y.as_slice(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(&[3], vec![-2.0f32, 0.0, 3.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.as_slice(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn dense_identity_passes_through() {
        let x = Tensor::from_vec(&[3], vec![1.5f32, -2.0, 0.25]).unwrap();
        let mut w = Tensor::<f32>::zeros(&[3, 3]);
        for i in 0..3 {
            w.row_mut(i)[i] = 1.0;
        }
        let b = Tensor::<f32>::zeros(&[3]);
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.as_slice(), x.as_slice());
    }

    #[test]
    fn gap_of_constant_rows_returns_the_constants() {
        let x = Tensor::from_vec(&[2, 4], vec![3.5f32; 4].into_iter().chain(vec![-1.25f32; 4]).collect())
            .unwrap();
        let y = global_avg_pool_forward(&x).unwrap();
        assert_eq!(y.as_slice(), &[3.5, -1.25]);
    }

    #[test]
    fn mse_and_mae_standard_definitions() {
        let p = Tensor::from_vec(&[2], vec![3.0f64, -1.0]).unwrap();
        let t = Tensor::from_vec(&[2], vec![1.0f64, 1.0]).unwrap();
        assert_eq!(mse_loss(&p, &t).unwrap(), 4.0);
        assert_eq!(mae_metric(&p, &t).unwrap(), 2.0);
    }
}
