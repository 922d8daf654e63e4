//! Whole-layer autodiff tape.
//!
//! Each entry is one layer application, not a scalar node, so backward
//! memory stays proportional to the activations. Identifiers are handed out
//! sequentially, which makes "every input precedes its consumer" true by
//! construction, and a single reverse sweep visits each entry exactly once.

use super::ops;
use super::ops::Padding;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ValueId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        requires_grad: bool,
    },
    Conv1d {
        input: ValueId,
        weights: ValueId,
        bias: ValueId,
        dilation: usize,
        pad: Padding,
    },
    Relu {
        input: ValueId,
    },
    Dense {
        input: ValueId,
        weights: ValueId,
        bias: ValueId,
    },
    GlobalAvgPool {
        input: ValueId,
    },
    MseLoss {
        pred: ValueId,
        target: ValueId,
    },
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node>,
    values: Vec<Tensor<F>>,
}

/// Gradients keyed by the tape identifiers of the values they belong to.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient for `id`, if it participated in the loss.
    pub fn get(&self, id: ValueId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor<F>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<F> {
        &self.values[id.0]
    }

    fn push(&mut self, node: Node, value: Tensor<F>) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(node);
        self.values.push(value);
        id
    }

    fn check_id(&self, id: ValueId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("value id {} not on this tape", id.0)));
        }
        Ok(())
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, value: Tensor<F>) -> ValueId {
        self.push(Node::Leaf { requires_grad: true }, value)
    }

    /// Non-trainable input leaf.
    pub fn constant(&mut self, value: Tensor<F>) -> ValueId {
        self.push(Node::Leaf { requires_grad: false }, value)
    }

    pub fn conv1d(
        &mut self,
        input: ValueId,
        weights: ValueId,
        bias: ValueId,
        dilation: usize,
        pad: Padding,
    ) -> Result<ValueId> {
        for id in [input, weights, bias] {
            self.check_id(id)?;
        }
        let out = ops::conv1d_forward(
            self.value(input),
            self.value(weights),
            self.value(bias),
            dilation,
            pad,
        )?;
        Ok(self.push(Node::Conv1d { input, weights, bias, dilation, pad }, out))
    }

    pub fn relu(&mut self, input: ValueId) -> Result<ValueId> {
        self.check_id(input)?;
        let out = ops::relu_forward(self.value(input));
        Ok(self.push(Node::Relu { input }, out))
    }

    pub fn dense(&mut self, input: ValueId, weights: ValueId, bias: ValueId) -> Result<ValueId> {
        for id in [input, weights, bias] {
            self.check_id(id)?;
        }
        let out = ops::dense_forward(self.value(input), self.value(weights), self.value(bias))?;
        Ok(self.push(Node::Dense { input, weights, bias }, out))
    }

    pub fn global_avg_pool(&mut self, input: ValueId) -> Result<ValueId> {
        self.check_id(input)?;
        let out = ops::global_avg_pool_forward(self.value(input))?;
        Ok(self.push(Node::GlobalAvgPool { input }, out))
    }

    pub fn mse_loss(&mut self, pred: ValueId, target: ValueId) -> Result<ValueId> {
        self.check_id(pred)?;
        self.check_id(target)?;
        let loss = ops::mse_loss(self.value(pred), self.value(target))?;
        Ok(self.push(Node::MseLoss { pred, target }, Tensor::scalar(loss)))
    }

    /// Reverse sweep seeded with d loss / d loss = 1.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<F>> {
        self.backward_seeded(loss, F::one())
    }

    /// Reverse sweep with an explicit upstream seed on the loss. A zero seed
    /// produces zero gradients everywhere.
    pub fn backward_seeded(&self, loss: ValueId, seed: F) -> Result<Gradients<F>> {
        self.check_id(loss)?;
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(seed));
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].clone() else { continue };
            match &self.nodes[idx] {
                Node::Leaf { .. } => {}
                Node::Conv1d { input, weights, bias, dilation, pad } => {
                    let (gi, gw, gb) = ops::conv1d_backward(
                        self.value(*input),
                        self.value(*weights),
                        *dilation,
                        *pad,
                        &gout,
                    )?;
                    accumulate(&mut grads, *input, gi)?;
                    accumulate(&mut grads, *weights, gw)?;
                    accumulate(&mut grads, *bias, gb)?;
                }
                Node::Relu { input } => {
                    let gi = ops::relu_backward(self.value(*input), &gout)?;
                    accumulate(&mut grads, *input, gi)?;
                }
                Node::Dense { input, weights, bias } => {
                    let (gi, gw, gb) =
                        ops::dense_backward(self.value(*input), self.value(*weights), &gout)?;
                    accumulate(&mut grads, *input, gi)?;
                    accumulate(&mut grads, *weights, gw)?;
                    accumulate(&mut grads, *bias, gb)?;
                }
                Node::GlobalAvgPool { input } => {
                    let gi = ops::global_avg_pool_backward(self.value(*input).shape(), &gout)?;
                    accumulate(&mut grads, *input, gi)?;
                }
                Node::MseLoss { pred, target } => {
                    let gp = ops::mse_backward(self.value(*pred), self.value(*target), gout.item())?;
                    accumulate(&mut grads, *pred, gp)?;
                }
            }
        }
        // inputs that never reached the loss keep None; flagged leaves that
        // did participate always have a tensor
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Node::Leaf { requires_grad: false } = node {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<F: Scalar>(
    grads: &mut [Option<Tensor<F>>],
    id: ValueId,
    g: Tensor<F>,
) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_derivative_one_parameter_dense() {
        // f(w) = w * x with x = 2, w = 3, target 0, loss = mse
        // dL/dw = 2 * (w*x) * x = 24
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[1], vec![2.0]).unwrap());
        let w = tape.param(Tensor::from_vec(&[1, 1], vec![3.0]).unwrap());
        let b = tape.param(Tensor::from_vec(&[1], vec![0.0]).unwrap());
        let pred = tape.dense(x, w, b).unwrap();
        let target = tape.constant(Tensor::from_vec(&[1], vec![0.0]).unwrap());
        let loss = tape.mse_loss(pred, target).unwrap();
        assert_eq!(tape.value(loss).item(), 36.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().as_slice(), &[24.0]);
        assert_eq!(grads.get(b).unwrap().as_slice(), &[12.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn zero_seed_yields_zero_parameter_gradients() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_vec(&[2, 4], (0..8).map(|i| i as f32).collect()).unwrap());
        let w = tape.param(Tensor::from_vec(&[3, 2, 3], vec![0.5; 18]).unwrap());
        let b = tape.param(Tensor::from_vec(&[3], vec![0.1; 3]).unwrap());
        let pad = ops::same_padding(3, 1, false);
        let c = tape.conv1d(x, w, b, 1, pad).unwrap();
        let r = tape.relu(c).unwrap();
        let p = tape.global_avg_pool(r).unwrap();
        let t = tape.constant(Tensor::from_vec(&[3], vec![1.0; 3]).unwrap());
        let loss = tape.mse_loss(p, t).unwrap();
        let grads = tape.backward_seeded(loss, 0.0).unwrap();
        for id in [w, b] {
            assert!(grads.get(id).unwrap().as_slice().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let r = tape.relu(x).unwrap();
        assert!(tape.backward(r).is_err());
    }

    #[test]
    fn shared_parameter_accumulates_both_paths() {
        // y = w*x + w*x reused through two dense nodes onto the same loss
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[1], vec![1.0]).unwrap());
        let w = tape.param(Tensor::from_vec(&[1, 1], vec![2.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(&[1], vec![0.0]).unwrap());
        let y1 = tape.dense(x, w, b).unwrap();
        let y2 = tape.dense(y1, w, b).unwrap(); // f = w^2 * x
        let t = tape.constant(Tensor::from_vec(&[1], vec![0.0]).unwrap());
        let loss = tape.mse_loss(y2, t).unwrap();
        // L = (w^2 x)^2, dL/dw = 2 (w^2 x) * 2 w x = 4 w^3 x^2 = 32
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().as_slice(), &[32.0]);
    }
}
