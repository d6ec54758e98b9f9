//! Minimal tensor and layer kernel set: forward/backward passes for
//! convolution, pooling, activation, dense, softmax cross-entropy, and
//! the momentum SGD update. Enough to train and fine-tune the VGG-style
//! models without an external framework.

pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;

pub use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool_forward, softmax,
    softmax_cross_entropy, Layer, LayerCtx, Mode, ParamGrads,
};
pub use network::{BatchStats, NetGrads, Network};
pub use optim::{sgd_momentum_step, SgdMomentum};
pub use tensor::Tensor;

#[cfg(test)]
mod kernel_tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(dims: &[usize], rng: &mut Rng) -> Tensor {
        let len = dims.iter().product();
        Tensor::new(dims, (0..len).map(|_| rng.next_symmetric(1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let input = rand_tensor(&[1, 5, 5], &mut Rng::new(2));
        let weights = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &weights, &bias, 1, 0).unwrap();
        assert_eq!(out.dims(), &[1, 5, 5]);
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let input = Tensor::zeros(&[2, 4, 4]);
        let weights = rand_tensor(&[3, 2, 3, 3], &mut Rng::new(3));
        let bias = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = conv2d_forward(&input, &weights, &bias, 1, 1).unwrap();
        for f in 0..3 {
            for v in &out.data()[f * 16..(f + 1) * 16] {
                assert_eq!(*v, bias.data()[f]);
            }
        }
    }

    /// Brute-force 6-nested-loop convolution in f64.
    fn conv_oracle(
        input: &Tensor,
        weights: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let (c_in, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
        let (f, k) = (weights.dims()[0], weights.dims()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0f64; f * oh * ow];
        for of in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[of] as f64;
                    for c in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy * stride + ky;
                                let ix = ox * stride + kx;
                                if iy < pad || ix < pad {
                                    continue;
                                }
                                let (iy, ix) = (iy - pad, ix - pad);
                                if iy >= h || ix >= w {
                                    continue;
                                }
                                let xv = input.data()[(c * h + iy) * w + ix] as f64;
                                let wv =
                                    weights.data()[((of * c_in + c) * k + ky) * k + kx] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    out[(of * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_brute_force_oracle() {
        let mut rng = Rng::new(17);
        for (stride, pad) in [(1usize, 1usize), (1, 0), (2, 1)] {
            let input = rand_tensor(&[1, 5, 5], &mut rng);
            let weights = rand_tensor(&[2, 1, 3, 3], &mut rng);
            let bias = rand_tensor(&[2], &mut rng);
            let got = conv2d_forward(&input, &weights, &bias, stride, pad).unwrap();
            let want = conv_oracle(&input, &weights, &bias, stride, pad);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.data().iter().zip(&want) {
                assert!((*g as f64 - w).abs() < 1e-6, "got {g} want {w}");
            }
        }
    }

    #[test]
    fn conv_rejects_non_integral_geometry() {
        let input = Tensor::zeros(&[1, 5, 5]);
        let weights = Tensor::zeros(&[1, 1, 2, 2]);
        let bias = Tensor::zeros(&[1]);
        assert!(matches!(
            conv2d_forward(&input, &weights, &bias, 2, 0),
            Err(crate::Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn dense_identity_and_bias_only() {
        let x = Tensor::new(&[3], vec![1.5, -2.0, 0.25]).unwrap();
        let eye = Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let zero_b = Tensor::zeros(&[3]);
        assert_eq!(dense_forward(&x, &eye, &zero_b).unwrap().data(), x.data());

        let zero_w = Tensor::zeros(&[3, 3]);
        let b = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(dense_forward(&x, &zero_w, &b).unwrap().data(), b.data());
    }

    #[test]
    fn dense_matches_hand_multiply() {
        let mut rng = Rng::new(23);
        let x = rand_tensor(&[4], &mut rng);
        let w = rand_tensor(&[3, 4], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        let got = dense_forward(&x, &w, &b).unwrap();
        for m in 0..3 {
            let mut want = b.data()[m] as f64;
            for n in 0..4 {
                want += w.data()[m * 4 + n] as f64 * x.data()[n] as f64;
            }
            assert!((got.data()[m] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_subgradient_convention() {
        let layer = Layer::Relu;
        let x = Tensor::new(&[2], vec![-1.0, 1.0]).unwrap();
        let (_, ctx) = layer.forward(&x, Mode::Infer, 0).unwrap();
        let up = Tensor::new(&[2], vec![5.0, 5.0]).unwrap();
        let (grad, _) = layer.backward(&up, &ctx).unwrap();
        assert_eq!(grad.data(), &[0.0, 5.0]);
    }

    #[test]
    fn maxpool_routes_and_conserves_gradient() {
        let layer = Layer::MaxPool { size: 2, stride: 2 };
        let x = Tensor::new(
            &[1, 4, 4],
            vec![
                1., 2., 3., 4., //
                5., 6., 7., 8., //
                9., 10., 11., 12., //
                13., 14., 15., 16.,
            ],
        )
        .unwrap();
        let (out, ctx) = layer.forward(&x, Mode::Infer, 0).unwrap();
        assert_eq!(out.data(), &[6.0, 8.0, 14.0, 16.0]);
        let up = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (grad, _) = layer.backward(&up, &ctx).unwrap();
        let grad_sum: f32 = grad.data().iter().sum();
        let up_sum: f32 = up.data().iter().sum();
        assert_eq!(grad_sum, up_sum);
        assert_eq!(grad.data()[5], 1.0);
        assert_eq!(grad.data()[7], 2.0);
        assert_eq!(grad.data()[13], 3.0);
        assert_eq!(grad.data()[15], 4.0);
    }

    #[test]
    fn maxpool_tie_breaks_first_row_major() {
        let layer = Layer::MaxPool { size: 2, stride: 2 };
        let x = Tensor::new(&[1, 2, 2], vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        let (_, ctx) = layer.forward(&x, Mode::Infer, 0).unwrap();
        let up = Tensor::new(&[1, 1, 1], vec![3.0]).unwrap();
        let (grad, _) = layer.backward(&up, &ctx).unwrap();
        assert_eq!(grad.data(), &[3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_cross_entropy_confident_correct() {
        let mut logits = Tensor::zeros(&[25]);
        logits.data_mut()[7] = 100.0;
        let (loss, _) = softmax_cross_entropy(&logits, 7).unwrap();
        assert!(loss < 1e-10, "loss was {loss}");
    }

    #[test]
    fn softmax_cross_entropy_uniform_case() {
        let logits = Tensor::zeros(&[25]);
        let (loss, _) = softmax_cross_entropy(&logits, 3).unwrap();
        assert!((loss - (25.0f32).ln()).abs() < 1e-6);
        assert!((loss - 3.218_876).abs() < 1e-6);
    }

    #[test]
    fn softmax_cross_entropy_finite_at_huge_logits() {
        for magnitude in [1e2f32, 1e3, 1e4] {
            let logits = Tensor::new(&[4], vec![magnitude, -magnitude, 0.0, magnitude / 2.0]).unwrap();
            let (loss, grad) = softmax_cross_entropy(&logits, 1).unwrap();
            assert!(loss.is_finite());
            assert!(grad.all_finite());
        }
    }

    #[test]
    fn softmax_cross_entropy_rejects_bad_target() {
        let logits = Tensor::zeros(&[3]);
        assert!(softmax_cross_entropy(&logits, 3).is_err());
    }

    #[test]
    fn softmax_gradient_sums_to_zero() {
        let logits = Tensor::new(&[5], vec![0.3, -1.2, 2.0, 0.0, 0.7]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, 2).unwrap();
        let sum: f32 = grad.data().iter().sum();
        assert!(sum.abs() < 1e-6);
    }

    #[test]
    fn dropout_mask_deterministic_and_scaled() {
        let layer = Layer::Dropout { rate: 0.5 };
        let x = Tensor::scalar_filled(&[100], 1.0);
        let mode = Mode::Train { dropout_seed: 42 };
        let (a, _) = layer.forward(&x, mode, 3).unwrap();
        let (b, _) = layer.forward(&x, mode, 3).unwrap();
        assert_eq!(a.data(), b.data());
        for v in a.data() {
            assert!(*v == 0.0 || *v == 2.0);
        }
        let kept = a.data().iter().filter(|&&v| v != 0.0).count();
        assert!(kept > 20 && kept < 80, "suspicious mask density: {kept}");
        let (c, _) = layer.forward(&x, Mode::Train { dropout_seed: 43 }, 3).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn dropout_inference_is_identity() {
        let layer = Layer::Dropout { rate: 0.9 };
        let x = Tensor::new(&[6], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let (out, _) = layer.forward(&x, Mode::Infer, 0).unwrap();
        assert_eq!(out.data(), x.data());
    }
}
