//! Adam optimizer with bias correction.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-parameter Adam moments plus hyperparameters.
///
/// Invariants: `m` and `v` mirror the parameter shapes, every `v` entry is
/// nonnegative, and `t` advances by exactly one per `step`.
#[derive(Clone, Debug)]
pub struct AdamState<F: Scalar> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    pub t: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(lr: F, beta1: F, beta2: F, epsilon: F, shapes: &[&[usize]]) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// lr 1e-3, beta (0.9, 0.999), eps 1e-8.
    pub fn with_defaults(shapes: &[&[usize]]) -> Self {
        Self::new(
            F::from_f64(1e-3),
            F::from_f64(0.9),
            F::from_f64(0.999),
            F::from_f64(1e-8),
            shapes,
        )
    }

    /// One bias-corrected update of every parameter in place.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        let mut refs: Vec<&mut Tensor<F>> = params.iter_mut().collect();
        self.step_refs(&mut refs, grads)
    }

    /// Same update through mutable references, for parameters that live in
    /// separate fields rather than one contiguous slice.
    pub fn step_refs(&mut self, params: &mut [&mut Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} parameters, {} gradients, state holds {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "adam: param {:?} vs grad {:?} vs state {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            let (ps, gs, ms, vs) =
                ((*p).as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..ps.len() {
                ms[i] = self.beta1 * ms[i] + (one - self.beta1) * gs[i];
                vs[i] = self.beta2 * vs[i] + (one - self.beta2) * gs[i] * gs[i];
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                ps[i] = ps[i] - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
