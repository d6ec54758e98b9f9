//! VGG-family model construction: conv/pool block stacking, the
//! freeze-fraction rule, head replacement for K classes, and a portable
//! bit-exact weights format. The published-benchmark catalog lives in
//! [`catalog`].

pub mod catalog;
pub mod weights;

pub use catalog::{catalog, catalog_lookup, ModelCatalogEntry};
pub use weights::{load_weights, save_weights};

use crate::nn::{Layer, Mode, Network, Tensor};
use crate::rng::{Rng, Stream};
use crate::visualize::NetworkInput;
use crate::{Error, Result};

/// Conventional input geometry for the catalog backbones.
pub const DEFAULT_INPUT_SIDE: usize = 224;
pub const DEFAULT_INPUT_CHANNELS: usize = 3;
/// Hidden width of the replacement classification head.
pub const DEFAULT_HEAD_UNITS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VggVariant {
    Vgg16,
    Vgg19,
}

impl VggVariant {
    /// Case-insensitive name resolution for the in-core buildable nets.
    pub fn parse(name: &str) -> Option<VggVariant> {
        match name.to_ascii_lowercase().as_str() {
            "vgg16" => Some(VggVariant::Vgg16),
            "vgg19" => Some(VggVariant::Vgg19),
            _ => None,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            VggVariant::Vgg16 => "VGG16",
            VggVariant::Vgg19 => "VGG19",
        }
    }

    /// Conv block layout: `(convs_in_block, filters)`, each block
    /// followed by a 2x2 max-pool.
    pub fn blocks(self) -> Vec<ConvBlock> {
        let spec: &[(usize, usize)] = match self {
            VggVariant::Vgg16 => &[(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)],
            VggVariant::Vgg19 => &[(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)],
        };
        spec.iter()
            .map(|&(convs, filters)| ConvBlock { convs, filters })
            .collect()
    }
}

/// One VGG-style block: `convs` 3x3 same-padding convolutions at
/// `filters` channels, then a 2x2/2 max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlock {
    pub convs: usize,
    pub filters: usize,
}

/// A buildable network description plus its built parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub net: Network,
    pub conv_layer_count: usize,
    pub freeze_fraction: f64,
    pub class_count: usize,
    pub input_side: usize,
    pub input_channels: usize,
}

/// Number of convolutional layers to freeze: round-half-up of
/// `freeze_fraction * conv_layer_count`, clamped to the valid range.
pub fn frozen_count(freeze_fraction: f64, conv_layer_count: usize) -> usize {
    let raw = (freeze_fraction * conv_layer_count as f64 + 0.5).floor();
    (raw.max(0.0) as usize).min(conv_layer_count)
}

/// Build a VGG-style network from explicit blocks, freeze the first
/// `frozen_count` convolutions, and attach a fresh
/// `flatten -> dense(head_units) -> relu -> dropout(0.5) -> dense(K) -> softmax`
/// head. Weight init is Glorot-uniform from `init_seed`.
#[allow(clippy::too_many_arguments)]
pub fn build_custom(
    name: &str,
    blocks: &[ConvBlock],
    head_units: usize,
    class_count: usize,
    freeze_fraction: f64,
    input_side: usize,
    input_channels: usize,
    init_seed: u64,
) -> Result<Model> {
    if class_count < 2 {
        return Err(Error::ShapeMismatch(format!(
            "class count {class_count} is below 2"
        )));
    }
    if !(0.0..=1.0).contains(&freeze_fraction) {
        return Err(Error::ShapeMismatch(format!(
            "freeze fraction {freeze_fraction} outside [0, 1]"
        )));
    }
    let min_side = 1usize << blocks.len();
    if !input_side.is_multiple_of(min_side) {
        return Err(Error::ShapeMismatch(format!(
            "input side {input_side} is not divisible by 2^{} for {} pooled blocks",
            blocks.len(),
            blocks.len()
        )));
    }

    let mut rng = Rng::from_stream(init_seed, Stream::WeightInit, 0);
    let mut layers = Vec::new();
    let mut channels = input_channels;
    let mut side = input_side;
    let conv_layer_count: usize = blocks.iter().map(|b| b.convs).sum();
    let freeze = frozen_count(freeze_fraction, conv_layer_count);
    let mut conv_built = 0usize;
    for block in blocks {
        for _ in 0..block.convs {
            let mut conv = Layer::conv(channels, block.filters, 3, 1, 1, &mut rng);
            conv.set_frozen(conv_built < freeze);
            layers.push(conv);
            layers.push(Layer::Relu);
            channels = block.filters;
            conv_built += 1;
        }
        layers.push(Layer::MaxPool { size: 2, stride: 2 });
        side /= 2;
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::dense(channels * side * side, head_units, &mut rng));
    layers.push(Layer::Relu);
    layers.push(Layer::Dropout { rate: 0.5 });
    layers.push(Layer::dense(head_units, class_count, &mut rng));
    layers.push(Layer::Softmax);

    Ok(Model {
        name: name.to_string(),
        net: Network::new(layers),
        conv_layer_count,
        freeze_fraction,
        class_count,
        input_side,
        input_channels,
    })
}

/// Build a standard VGG16/VGG19 with a fresh K-class head.
pub fn build_vgg(
    variant: VggVariant,
    class_count: usize,
    freeze_fraction: f64,
    input_side: usize,
    input_channels: usize,
    init_seed: u64,
) -> Result<Model> {
    build_custom(
        variant.display_name(),
        &variant.blocks(),
        DEFAULT_HEAD_UNITS,
        class_count,
        freeze_fraction,
        input_side,
        input_channels,
        init_seed,
    )
}

impl Model {
    /// Indices of the convolutional layers, in chain order.
    pub fn conv_layer_indices(&self) -> Vec<usize> {
        self.net
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv2d { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn frozen_conv_count(&self) -> usize {
        self.net
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv2d { .. }) && l.is_frozen())
            .count()
    }

    pub fn input_tensor(&self, input: &NetworkInput) -> Result<Tensor> {
        if input.side != self.input_side || input.channels != self.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{}x{} against model expecting {}x{}x{}",
                input.channels,
                input.side,
                input.side,
                self.input_channels,
                self.input_side,
                self.input_side
            )));
        }
        Tensor::new(
            &[input.channels, input.side, input.side],
            input.values.clone(),
        )
    }

    pub fn logits(&self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.net.logits(input, mode)
    }

    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        self.net.predict(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_count_paper_grid() {
        assert_eq!(frozen_count(0.8, 16), 13);
        assert_eq!(frozen_count(0.6, 16), 10);
        assert_eq!(frozen_count(0.4, 16), 6);
        assert_eq!(frozen_count(0.2, 16), 3);
        assert_eq!(frozen_count(0.8, 13), 10);
    }

    #[test]
    fn frozen_count_boundaries() {
        for n in [1usize, 5, 13, 16, 30] {
            assert_eq!(frozen_count(0.0, n), 0);
            assert_eq!(frozen_count(1.0, n), n);
        }
        // round-half-up at an exact half
        assert_eq!(frozen_count(0.5, 13), 7);
    }

    #[test]
    fn frozen_count_monotone_in_fraction() {
        for n in [13usize, 16] {
            let mut prev = 0;
            for step in 0..=100 {
                let f = step as f64 / 100.0;
                let c = frozen_count(f, n);
                assert!(c >= prev, "non-monotone at {f}");
                prev = c;
            }
        }
    }

    #[test]
    fn vgg19_layout() {
        let m = build_vgg(VggVariant::Vgg19, 25, 0.8, 32, 3, 1).unwrap();
        assert_eq!(m.conv_layer_count, 16);
        assert_eq!(m.frozen_conv_count(), 13);
        // final dense feeds 25 classes
        let last_dense = m
            .net
            .layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense { weights, .. } => Some(weights.dims()[0]),
                _ => None,
            })
            .unwrap();
        assert_eq!(last_dense, 25);
    }

    #[test]
    fn vgg16_zero_freeze_has_no_frozen_layers() {
        let m = build_vgg(VggVariant::Vgg16, 25, 0.0, 32, 3, 2).unwrap();
        assert_eq!(m.conv_layer_count, 13);
        assert_eq!(m.frozen_conv_count(), 0);
        assert!(m.net.layers.iter().all(|l| !l.is_frozen()));
    }

    #[test]
    fn frozen_layers_form_a_prefix() {
        for (variant, fraction) in [
            (VggVariant::Vgg16, 0.2),
            (VggVariant::Vgg16, 0.6),
            (VggVariant::Vgg19, 0.4),
            (VggVariant::Vgg19, 0.8),
        ] {
            let m = build_vgg(variant, 5, fraction, 32, 1, 3).unwrap();
            let flags: Vec<bool> = m
                .conv_layer_indices()
                .iter()
                .map(|&i| m.net.layers[i].is_frozen())
                .collect();
            let frozen = flags.iter().filter(|&&f| f).count();
            assert_eq!(frozen, frozen_count(fraction, m.conv_layer_count));
            assert!(flags[..frozen].iter().all(|&f| f));
            assert!(flags[frozen..].iter().all(|&f| !f));
        }
    }

    #[test]
    fn head_is_never_frozen() {
        let m = build_vgg(VggVariant::Vgg19, 7, 1.0, 32, 1, 4).unwrap();
        let mut seen_flatten = false;
        for layer in &m.net.layers {
            if matches!(layer, Layer::Flatten) {
                seen_flatten = true;
            }
            if seen_flatten && layer.has_params() {
                assert!(!layer.is_frozen());
            }
        }
    }

    /// Symbolic shape walker, independent of the tensor kernels.
    fn walk_shapes(m: &Model) -> Option<usize> {
        let mut dims: Vec<usize> = vec![m.input_channels, m.input_side, m.input_side];
        for layer in &m.net.layers {
            match layer {
                Layer::Conv2d {
                    weights,
                    stride,
                    pad,
                    ..
                } => {
                    let [f, c, k, _] = [
                        weights.dims()[0],
                        weights.dims()[1],
                        weights.dims()[2],
                        weights.dims()[3],
                    ];
                    if dims.len() != 3 || dims[0] != c {
                        return None;
                    }
                    let oh = (dims[1] + 2 * pad).checked_sub(k)? / stride + 1;
                    let ow = (dims[2] + 2 * pad).checked_sub(k)? / stride + 1;
                    dims = vec![f, oh, ow];
                }
                Layer::MaxPool { size, stride } => {
                    if dims.len() != 3 || dims[1] < *size {
                        return None;
                    }
                    dims = vec![
                        dims[0],
                        (dims[1] - size) / stride + 1,
                        (dims[2] - size) / stride + 1,
                    ];
                }
                Layer::Flatten => dims = vec![dims.iter().product()],
                Layer::Dense { weights, .. } => {
                    if dims.len() != 1 || dims[0] != weights.dims()[1] {
                        return None;
                    }
                    dims = vec![weights.dims()[0]];
                }
                Layer::Relu | Layer::Dropout { .. } | Layer::Softmax => {}
            }
        }
        (dims.len() == 1).then(|| dims[0])
    }

    #[test]
    fn vgg16_chain_is_shape_consistent() {
        let m = build_vgg(VggVariant::Vgg16, 2, 0.5, 32, 3, 5).unwrap();
        assert_eq!(walk_shapes(&m), Some(2));
    }

    #[test]
    fn vgg19_chain_is_shape_consistent_at_224() {
        let m = build_vgg(VggVariant::Vgg19, 25, 0.8, 224, 3, 5).unwrap();
        assert_eq!(walk_shapes(&m), Some(25));
    }

    #[test]
    fn indivisible_input_side_rejected() {
        assert!(build_vgg(VggVariant::Vgg16, 2, 0.0, 33, 3, 1).is_err());
    }

    #[test]
    fn variant_parse_is_case_insensitive() {
        assert_eq!(VggVariant::parse("VGG16"), Some(VggVariant::Vgg16));
        assert_eq!(VggVariant::parse("vgg19"), Some(VggVariant::Vgg19));
        assert_eq!(VggVariant::parse("ResNet50"), None);
    }
}
