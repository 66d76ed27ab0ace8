use crate::error::{Error, Result};
use crate::model::{ApnetParams, ParamKind};
use crate::tensor::Real;

/// One momentum step with L2 decay folded into the gradient:
/// `v = momentum * v + grad + weight_decay * param; param -= lr * v`.
pub fn sgd_step<T: Real>(
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    if grad.len() != param.len() || velocity.len() != param.len() {
        return Err(Error::Shape(format!(
            "sgd_step: {} params, {} grads, {} velocities",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p = *p - lr * *v;
    }
    Ok(())
}

/// Momentum buffers for a whole model, in canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &ApnetParams<T>, momentum: T, weight_decay: T) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: params.to_flat().iter().map(|t| vec![T::zero(); t.dims().len()]).collect(),
        }
    }

    /// Update every tensor; biases and attention logits are not decayed.
    pub fn step(&mut self, params: &mut ApnetParams<T>, grads: &[Vec<T>], lr: T) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(Error::Shape(format!(
                "{} gradient tensors for {} parameters",
                grads.len(),
                self.velocity.len()
            )));
        }
        let mut result = Ok(());
        let mut i = 0;
        params.visit_mut(|kind, data| {
            if result.is_err() {
                return;
            }
            let wd = match kind {
                ParamKind::Weight => self.weight_decay,
                ParamKind::Bias | ParamKind::AttentionLogits => T::zero(),
            };
            result = sgd_step(data, &grads[i], &mut self.velocity[i], lr, self.momentum, wd);
            i += 1;
        });
        result
    }
}
