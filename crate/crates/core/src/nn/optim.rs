//! Momentum SGD with the `v <- m*v - lr*g; w <- w + v` update.

use crate::nn::tensor::Tensor;
use crate::{Error, Result};

/// Optimizer state: one velocity tensor per trainable parameter tensor,
/// allocated on first use.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f32,
    pub momentum: f32,
    velocity: Vec<Option<(Tensor, Tensor)>>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f32, momentum: f32) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        assert!((0.0..1.0).contains(&momentum), "momentum must lie in [0, 1)");
        SgdMomentum {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Update the parameter pair at `slot` (one slot per parameterized
    /// layer). Velocity dims always match the parameter dims.
    pub fn update_slot(
        &mut self,
        slot: usize,
        weights: &mut Tensor,
        bias: &mut Tensor,
        grad_w: &Tensor,
        grad_b: &Tensor,
    ) -> Result<()> {
        if self.velocity.len() <= slot {
            self.velocity.resize(slot + 1, None);
        }
        let entry = self.velocity[slot].get_or_insert_with(|| {
            (Tensor::zeros(weights.dims()), Tensor::zeros(bias.dims()))
        });
        sgd_momentum_step(weights, grad_w, &mut entry.0, self.learning_rate, self.momentum)?;
        sgd_momentum_step(bias, grad_b, &mut entry.1, self.learning_rate, self.momentum)?;
        Ok(())
    }

    pub fn velocity(&self, slot: usize) -> Option<&(Tensor, Tensor)> {
        self.velocity.get(slot).and_then(|v| v.as_ref())
    }
}

/// One momentum step on a single tensor: `v <- m*v - lr*g; w <- w + v`.
pub fn sgd_momentum_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    learning_rate: f32,
    momentum: f32,
) -> Result<()> {
    if param.dims() != grad.dims() || param.dims() != velocity.dims() {
        return Err(Error::ShapeMismatch(format!(
            "param {:?}, grad {:?}, velocity {:?}",
            param.dims(),
            grad.dims(),
            velocity.dims()
        )));
    }
    for ((w, g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = momentum * *v - learning_rate * *g;
        *w += *v;
    }
    Ok(())
}
