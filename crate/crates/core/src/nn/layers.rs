//! Layer kernels: forward and backward passes for convolution, ReLU,
//! max-pooling, flatten, dense, dropout and softmax.
//!
//! Convolution is cross-correlation (no kernel flip). Max-pool ties
//! break toward the first row-major argmax so backward routing is
//! deterministic. Dropout uses inverted scaling at train time, so
//! inference never rescales.

use crate::nn::tensor::Tensor;
use crate::rng::{mix, Rng, Stream};
use crate::{Error, Result};

/// Execution mode for a single-sample pass. `Train` carries the seed
/// that drives this sample's dropout masks.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Infer,
}

/// One network layer, parameters inline.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        /// `[filters, in_channels, k, k]`
        weights: Tensor,
        /// `[filters]`
        bias: Tensor,
        stride: usize,
        pad: usize,
        frozen: bool,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        /// `[out, in]`
        weights: Tensor,
        /// `[out]`
        bias: Tensor,
        frozen: bool,
    },
    Dropout {
        rate: f32,
    },
    Softmax,
}

/// Gradients for one parameterized layer.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Cached forward state consumed by the matching backward call.
#[derive(Debug, Clone)]
pub enum LayerCtx {
    Conv { input: Tensor },
    Relu { input_sign: Vec<bool> },
    MaxPool { argmax: Vec<usize>, in_dims: Vec<usize> },
    Flatten { in_dims: Vec<usize> },
    Dense { input: Tensor },
    Dropout { scale: Vec<f32> },
    Softmax { output: Tensor },
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f32).sqrt()
}

impl Layer {
    /// Convolution with Glorot-uniform weights and zero bias.
    pub fn conv(
        in_channels: usize,
        filters: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Layer {
        let limit = glorot_limit(in_channels * k * k, filters * k * k);
        let data = (0..filters * in_channels * k * k)
            .map(|_| rng.next_symmetric(limit))
            .collect();
        Layer::Conv2d {
            weights: Tensor::new(&[filters, in_channels, k, k], data).expect("conv dims"),
            bias: Tensor::zeros(&[filters]),
            stride,
            pad,
            frozen: false,
        }
    }

    /// Dense layer with Glorot-uniform weights and zero bias.
    pub fn dense(inputs: usize, outputs: usize, rng: &mut Rng) -> Layer {
        let limit = glorot_limit(inputs, outputs);
        let data = (0..outputs * inputs)
            .map(|_| rng.next_symmetric(limit))
            .collect();
        Layer::Dense {
            weights: Tensor::new(&[outputs, inputs], data).expect("dense dims"),
            bias: Tensor::zeros(&[outputs]),
            frozen: false,
        }
    }

    pub fn is_frozen(&self) -> bool {
        match self {
            Layer::Conv2d { frozen, .. } | Layer::Dense { frozen, .. } => *frozen,
            _ => false,
        }
    }

    pub fn set_frozen(&mut self, value: bool) {
        match self {
            Layer::Conv2d { frozen, .. } | Layer::Dense { frozen, .. } => *frozen = value,
            _ => {}
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }

    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias, .. } => {
                Some((weights, bias))
            }
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias, .. } => {
                Some((weights, bias))
            }
            _ => None,
        }
    }

    /// Forward pass caching whatever backward will need. `layer_idx`
    /// decorrelates dropout streams between layers.
    pub fn forward(
        &self,
        input: &Tensor,
        mode: Mode,
        layer_idx: usize,
    ) -> Result<(Tensor, LayerCtx)> {
        match self {
            Layer::Conv2d {
                weights,
                bias,
                stride,
                pad,
                ..
            } => {
                let out = conv2d_forward(input, weights, bias, *stride, *pad)?;
                Ok((out, LayerCtx::Conv { input: input.clone() }))
            }
            Layer::Relu => {
                let mut out = input.clone();
                let sign: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                Ok((out, LayerCtx::Relu { input_sign: sign }))
            }
            Layer::MaxPool { size, stride } => {
                let (out, argmax) = maxpool_forward(input, *size, *stride)?;
                Ok((
                    out,
                    LayerCtx::MaxPool {
                        argmax,
                        in_dims: input.dims().to_vec(),
                    },
                ))
            }
            Layer::Flatten => {
                let in_dims = input.dims().to_vec();
                let flat = input.clone().reshaped(&[input.len()])?;
                Ok((flat, LayerCtx::Flatten { in_dims }))
            }
            Layer::Dense { weights, bias, .. } => {
                let out = dense_forward(input, weights, bias)?;
                Ok((out, LayerCtx::Dense { input: input.clone() }))
            }
            Layer::Dropout { rate } => {
                let scale = match mode {
                    Mode::Train { dropout_seed } if *rate > 0.0 => {
                        let keep = 1.0 - rate;
                        let mut rng =
                            Rng::new(mix(dropout_seed, Stream::Dropout, layer_idx as u64));
                        (0..input.len())
                            .map(|_| if rng.next_f32() < *rate { 0.0 } else { 1.0 / keep })
                            .collect()
                    }
                    _ => vec![1.0; input.len()],
                };
                let mut out = input.clone();
                for (v, s) in out.data_mut().iter_mut().zip(&scale) {
                    *v *= s;
                }
                Ok((out, LayerCtx::Dropout { scale }))
            }
            Layer::Softmax => {
                let out = softmax(input);
                Ok((out.clone(), LayerCtx::Softmax { output: out }))
            }
        }
    }

    /// Backward pass. Returns the gradient w.r.t. the layer input and,
    /// for parameterized layers, the parameter gradients.
    pub fn backward(
        &self,
        grad_out: &Tensor,
        ctx: &LayerCtx,
    ) -> Result<(Tensor, Option<ParamGrads>)> {
        match (self, ctx) {
            (
                Layer::Conv2d {
                    weights,
                    stride,
                    pad,
                    ..
                },
                LayerCtx::Conv { input },
            ) => {
                let (grad_in, grads) = conv2d_backward(input, weights, grad_out, *stride, *pad)?;
                Ok((grad_in, Some(grads)))
            }
            (Layer::Relu, LayerCtx::Relu { input_sign }) => {
                let mut grad_in = grad_out.clone();
                for (g, &keep) in grad_in.data_mut().iter_mut().zip(input_sign) {
                    if !keep {
                        *g = 0.0;
                    }
                }
                Ok((grad_in, None))
            }
            (Layer::MaxPool { .. }, LayerCtx::MaxPool { argmax, in_dims }) => {
                let mut grad_in = Tensor::zeros(in_dims);
                for (g, &pos) in grad_out.data().iter().zip(argmax) {
                    grad_in.data_mut()[pos] += g;
                }
                Ok((grad_in, None))
            }
            (Layer::Flatten, LayerCtx::Flatten { in_dims }) => {
                Ok((grad_out.clone().reshaped(in_dims)?, None))
            }
            (Layer::Dense { weights, .. }, LayerCtx::Dense { input }) => {
                let (grad_in, grads) = dense_backward(input, weights, grad_out)?;
                Ok((grad_in, Some(grads)))
            }
            (Layer::Dropout { .. }, LayerCtx::Dropout { scale }) => {
                let mut grad_in = grad_out.clone();
                for (g, s) in grad_in.data_mut().iter_mut().zip(scale) {
                    *g *= s;
                }
                Ok((grad_in, None))
            }
            (Layer::Softmax, LayerCtx::Softmax { output }) => {
                let s = output.data();
                let g = grad_out.data();
                let dot: f32 = s.iter().zip(g).map(|(a, b)| a * b).sum();
                let data: Vec<f32> = s.iter().zip(g).map(|(si, gi)| si * (gi - dot)).collect();
                Ok((Tensor::new(output.dims(), data)?, None))
            }
            _ => Err(Error::ShapeMismatch(
                "backward called with a mismatched forward cache".to_string(),
            )),
        }
    }
}

/// Output spatial extent for convolution; errors unless the geometry
/// divides evenly.
fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k || !(padded - k).is_multiple_of(stride) {
        return Err(Error::ShapeMismatch(format!(
            "input {input} with kernel {k}, stride {stride}, pad {pad}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Cross-correlation of `input [C,H,W]` with `weights [F,C,k,k]` plus bias.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let [c_in, h, w] = dims3(input)?;
    let [f, wc, k, k2] = dims4(weights)?;
    if wc != c_in || k != k2 || bias.dims() != [f] {
        return Err(Error::ShapeMismatch(format!(
            "conv weights {:?} / bias {:?} against input {:?}",
            weights.dims(),
            bias.dims(),
            input.dims()
        )));
    }
    let oh = conv_out_extent(h, k, stride, pad)?;
    let ow = conv_out_extent(w, k, stride, pad)?;

    let mut out = vec![0.0f32; f * oh * ow];
    for of in 0..f {
        let b = bias.data()[of];
        out[of * oh * ow..(of + 1) * oh * ow].fill(b);
    }
    let x = input.data();
    let wt = weights.data();
    for of in 0..f {
        let out_plane = of * oh * ow;
        for c in 0..c_in {
            let in_plane = c * h * w;
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_out_range(h, stride, pad, ky, oh);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_out_range(w, stride, pad, kx, ow);
                    let wv = wt[((of * c_in + c) * k + ky) * k + kx];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let in_row = in_plane + iy * w;
                        let out_row = out_plane + oy * ow;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            out[out_row + ox] += wv * x[in_row + ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[f, oh, ow], out)
}

/// Output rows `oy` for which `oy*stride + koff - pad` lands inside
/// `[0, extent)`. Returned half-open.
fn valid_out_range(
    extent: usize,
    stride: usize,
    pad: usize,
    koff: usize,
    out_extent: usize,
) -> (usize, usize) {
    let lo = pad.saturating_sub(koff).div_ceil(stride);
    let hi_inclusive = (extent + pad).saturating_sub(koff + 1) / stride;
    (lo.min(out_extent), (hi_inclusive + 1).min(out_extent))
}

/// Gradients of conv2d w.r.t. input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, ParamGrads)> {
    let [c_in, h, w] = dims3(input)?;
    let [f, _, k, _] = dims4(weights)?;
    let [gf, oh, ow] = dims3(grad_out)?;
    if gf != f {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?} against {f} filters",
            grad_out.dims()
        )));
    }

    let mut grad_bias = vec![0.0f32; f];
    for (of, gb) in grad_bias.iter_mut().enumerate() {
        *gb = grad_out.data()[of * oh * ow..(of + 1) * oh * ow].iter().sum();
    }

    let x = input.data();
    let wt = weights.data();
    let g = grad_out.data();
    let mut grad_w = vec![0.0f32; weights.len()];
    let mut grad_in = vec![0.0f32; input.len()];
    for of in 0..f {
        let out_plane = of * oh * ow;
        for c in 0..c_in {
            let in_plane = c * h * w;
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_out_range(h, stride, pad, ky, oh);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_out_range(w, stride, pad, kx, ow);
                    let widx = ((of * c_in + c) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let mut wg = 0.0f32;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let in_row = in_plane + iy * w;
                        let out_row = out_plane + oy * ow;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            let gv = g[out_row + ox];
                            wg += gv * x[in_row + ix];
                            grad_in[in_row + ix] += gv * wv;
                        }
                    }
                    grad_w[widx] += wg;
                }
            }
        }
    }
    Ok((
        Tensor::new(&[c_in, h, w], grad_in)?,
        ParamGrads {
            weights: Tensor::new(weights.dims(), grad_w)?,
            bias: Tensor::new(&[f], grad_bias)?,
        },
    ))
}

/// Affine map `W x + b` with `W [M,N]`, `x [N]`, `b [M]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = input.len();
    let dims = weights.dims();
    if dims.len() != 2 || dims[1] != n || bias.len() != dims[0] {
        return Err(Error::ShapeMismatch(format!(
            "dense weights {:?} / bias {:?} against input of {n}",
            dims,
            bias.dims()
        )));
    }
    let m = dims[0];
    let x = input.data();
    let wt = weights.data();
    let mut out = bias.data().to_vec();
    for (row, o) in out.iter_mut().enumerate() {
        let wrow = &wt[row * n..(row + 1) * n];
        let mut acc = 0.0f32;
        for (wv, xv) in wrow.iter().zip(x) {
            acc += wv * xv;
        }
        *o += acc;
    }
    Tensor::new(&[m], out)
}

/// Gradients of the affine map w.r.t. input, weights and bias.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, ParamGrads)> {
    let n = input.len();
    let m = weights.dims()[0];
    if grad_out.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient of {} against {m} outputs",
            grad_out.len()
        )));
    }
    let x = input.data();
    let wt = weights.data();
    let g = grad_out.data();
    let mut grad_w = vec![0.0f32; m * n];
    let mut grad_in = vec![0.0f32; n];
    for row in 0..m {
        let gv = g[row];
        let wrow = &wt[row * n..(row + 1) * n];
        let grow = &mut grad_w[row * n..(row + 1) * n];
        for i in 0..n {
            grow[i] = gv * x[i];
            grad_in[i] += gv * wrow[i];
        }
    }
    Ok((
        Tensor::new(&[n], grad_in)?,
        ParamGrads {
            weights: Tensor::new(weights.dims(), grad_w)?,
            bias: Tensor::new(&[m], g.to_vec())?,
        },
    ))
}

/// Max-pool over `size x size` windows. Windows that would overhang the
/// input are dropped (floor semantics). Returns the pooled tensor and
/// the flat input index of each window's first-row-major maximum.
pub fn maxpool_forward(input: &Tensor, size: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let [c, h, w] = dims3(input)?;
    if h < size || w < size {
        return Err(Error::ShapeMismatch(format!(
            "pool window {size} over {h}x{w} input"
        )));
    }
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_pos = 0;
                for ky in 0..size {
                    let row = plane + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..size {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                            best_pos = row + kx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_pos);
            }
        }
    }
    Ok((Tensor::new(&[c, oh, ow], out)?, argmax))
}

/// Numerically stable softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out = logits.clone();
    let mut sum = 0.0f32;
    for v in out.data_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in out.data_mut() {
        *v *= inv;
    }
    out
}

/// Fused categorical cross-entropy on logits: returns the loss
/// `-log softmax(logits)[target]` and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, target: usize) -> Result<(f32, Tensor)> {
    let k = logits.len();
    if k == 0 || target >= k {
        return Err(Error::LabelOutOfRange {
            class: target,
            count: k,
            sample: 0,
        });
    }
    let max = logits.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut exps = Vec::with_capacity(k);
    let mut sum = 0.0f32;
    for &v in logits.data() {
        let e = (v - max).exp();
        exps.push(e);
        sum += e;
    }
    // loss = log(sum exp(z - max)) - (z_t - max), avoiding log of a tiny ratio
    let loss = sum.ln() - (logits.data()[target] - max);
    let inv = 1.0 / sum;
    let mut grad = exps;
    for g in grad.iter_mut() {
        *g *= inv;
    }
    grad[target] -= 1.0;
    Ok((loss, Tensor::new(logits.dims(), grad)?))
}

fn dims3(t: &Tensor) -> Result<[usize; 3]> {
    match t.dims() {
        [a, b, c] => Ok([*a, *b, *c]),
        other => Err(Error::ShapeMismatch(format!("expected 3-d tensor, got {other:?}"))),
    }
}

fn dims4(t: &Tensor) -> Result<[usize; 4]> {
    match t.dims() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::ShapeMismatch(format!("expected 4-d tensor, got {other:?}"))),
    }
}
