//! Layer-chain composition: single-sample passes and deterministic
//! batch-parallel gradient accumulation.

use crate::nn::layers::{Layer, LayerCtx, Mode, ParamGrads};
use crate::nn::optim::SgdMomentum;
use crate::nn::tensor::Tensor;
use crate::par;
use crate::{Error, Result};

/// A plain sequence of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Per-layer gradients for one batch, `None` for layers without
/// trainable parameters and for frozen layers.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub per_layer: Vec<Option<ParamGrads>>,
}

/// Loss/correctness summary of one forward+backward batch.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean_loss: f32,
    pub correct: usize,
    pub total: usize,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    /// Run every layer in order. A trailing [`Layer::Softmax`] is
    /// skipped so the result is the raw logits; training losses and
    /// argmax predictions both operate on logits.
    pub fn logits(&self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = input.clone();
        for (idx, layer) in self.active_layers().iter().enumerate() {
            let (out, _) = layer.forward(&x, mode, idx).map_err(|e| {
                Error::ShapeMismatch(format!("layer {idx}: {e}"))
            })?;
            x = out;
        }
        Ok(x)
    }

    /// Class probabilities: logits through a stable softmax.
    pub fn predict_proba(&self, input: &Tensor) -> Result<Tensor> {
        Ok(crate::nn::layers::softmax(&self.logits(input, Mode::Infer)?))
    }

    /// Predicted class index.
    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(self.logits(input, Mode::Infer)?.argmax())
    }

    fn active_layers(&self) -> &[Layer] {
        match self.layers.last() {
            Some(Layer::Softmax) => &self.layers[..self.layers.len() - 1],
            _ => &self.layers[..],
        }
    }

    /// Index of the first layer with trainable parameters; backward
    /// passes stop there since nothing below needs gradients.
    pub fn first_trainable(&self) -> Option<usize> {
        self.active_layers()
            .iter()
            .position(|l| l.has_params() && !l.is_frozen())
    }

    /// Forward + backward for one labeled sample. Returns the loss,
    /// whether the argmax matched, and per-layer parameter gradients
    /// (entries only for trainable layers).
    pub fn sample_grads(
        &self,
        input: &Tensor,
        target: usize,
        mode: Mode,
    ) -> Result<(f32, bool, Vec<Option<ParamGrads>>)> {
        let layers = self.active_layers();
        let mut ctxs: Vec<LayerCtx> = Vec::with_capacity(layers.len());
        let mut x = input.clone();
        for (idx, layer) in layers.iter().enumerate() {
            let (out, ctx) = layer
                .forward(&x, mode, idx)
                .map_err(|e| Error::ShapeMismatch(format!("layer {idx}: {e}")))?;
            ctxs.push(ctx);
            x = out;
        }
        let (loss, mut grad) = crate::nn::layers::softmax_cross_entropy(&x, target)?;
        let correct = x.argmax() == target;

        let stop = self.first_trainable().unwrap_or(layers.len());
        let mut per_layer: Vec<Option<ParamGrads>> = vec![None; self.layers.len()];
        for idx in (stop..layers.len()).rev() {
            let (grad_in, params) = layers[idx].backward(&grad, &ctxs[idx])?;
            if !layers[idx].is_frozen() {
                per_layer[idx] = params;
            }
            if idx == stop {
                break;
            }
            grad = grad_in;
        }
        Ok((loss, correct, per_layer))
    }

    /// Forward + backward over a batch. Per-sample work fans out in
    /// parallel; gradients are summed in sample order and averaged, so
    /// the result does not depend on thread scheduling.
    pub fn batch_grads(
        &self,
        inputs: &[Tensor],
        targets: &[usize],
        sample_seeds: &[u64],
        training: bool,
    ) -> Result<(BatchStats, NetGrads)> {
        assert_eq!(inputs.len(), targets.len());
        assert!(!inputs.is_empty(), "empty batch");
        let n = inputs.len();
        let results = par::map_range(n, |i| {
            let mode = if training {
                Mode::Train {
                    dropout_seed: sample_seeds[i],
                }
            } else {
                Mode::Infer
            };
            self.sample_grads(&inputs[i], targets[i], mode)
        });

        let mut sum_loss = 0.0f64;
        let mut correct = 0usize;
        let mut acc: Vec<Option<ParamGrads>> = vec![None; self.layers.len()];
        for res in results {
            let (loss, ok, grads) = res?;
            sum_loss += loss as f64;
            correct += ok as usize;
            for (slot, g) in acc.iter_mut().zip(grads) {
                match (slot.as_mut(), g) {
                    (None, Some(g)) => *slot = Some(g),
                    (Some(a), Some(g)) => {
                        for (av, gv) in a.weights.data_mut().iter_mut().zip(g.weights.data()) {
                            *av += gv;
                        }
                        for (av, gv) in a.bias.data_mut().iter_mut().zip(g.bias.data()) {
                            *av += gv;
                        }
                    }
                    _ => {}
                }
            }
        }
        let scale = 1.0 / n as f32;
        for slot in acc.iter_mut().flatten() {
            for v in slot.weights.data_mut() {
                *v *= scale;
            }
            for v in slot.bias.data_mut() {
                *v *= scale;
            }
        }
        Ok((
            BatchStats {
                mean_loss: (sum_loss / n as f64) as f32,
                correct,
                total: n,
            },
            NetGrads { per_layer: acc },
        ))
    }

    /// Forward-only loss/accuracy over labeled samples, in parallel,
    /// reduced in sample order.
    pub fn batch_eval(&self, inputs: &[Tensor], targets: &[usize]) -> Result<BatchStats> {
        assert_eq!(inputs.len(), targets.len());
        assert!(!inputs.is_empty(), "empty batch");
        let n = inputs.len();
        let results = par::map_range(n, |i| -> Result<(f32, bool)> {
            let logits = self.logits(&inputs[i], Mode::Infer)?;
            let (loss, _) = crate::nn::layers::softmax_cross_entropy(&logits, targets[i])?;
            Ok((loss, logits.argmax() == targets[i]))
        });
        let mut sum_loss = 0.0f64;
        let mut correct = 0usize;
        for res in results {
            let (loss, ok) = res?;
            sum_loss += loss as f64;
            correct += ok as usize;
        }
        Ok(BatchStats {
            mean_loss: (sum_loss / n as f64) as f32,
            correct,
            total: n,
        })
    }

    /// Apply one optimizer step. Frozen layers are skipped outright,
    /// so their parameters stay bit-identical.
    pub fn apply_step(&mut self, grads: &NetGrads, opt: &mut SgdMomentum) -> Result<()> {
        for (slot, (layer, grad)) in self
            .layers
            .iter_mut()
            .zip(&grads.per_layer)
            .enumerate()
        {
            if layer.is_frozen() {
                continue;
            }
            if let (Some((w, b)), Some(g)) = (layer.params_mut(), grad.as_ref()) {
                opt.update_slot(slot, w, b, &g.weights, &g.bias)?;
            }
        }
        Ok(())
    }

    /// Named parameter tensors in chain order: `layer<idx>.weights`,
    /// `layer<idx>.bias`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            if let Some((w, b)) = layer.params() {
                out.push((format!("layer{idx}.weights"), w));
                out.push((format!("layer{idx}.bias"), b));
            }
        }
        out
    }
}
