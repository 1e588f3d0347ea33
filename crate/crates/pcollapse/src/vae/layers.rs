//! Convolutional building blocks with explicit forward/backward passes.
//!
//! Feature maps are `(C, H, W)` arrays. Convolutions run as im2col followed
//! by a matrix product so matrixmultiply does the heavy lifting; weights are
//! stored directly in matrix form `(out_c, in_c * kh * kw)`.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A 2-D convolution with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out_c, in_c * kh * kw)` weight matrix.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Activations cached by [`Conv2d::forward`] for the backward pass.
pub struct Conv2dCache {
    patches: Array2<f64>,
    input_dim: (usize, usize, usize),
    output_dim: (usize, usize, usize),
}

/// Parameter gradients of one convolution.
#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    /// Uniform init scaled by `1/sqrt(fan_in)`.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = in_channels * kernel * kernel;
        let bound = 1.0 / (k as f64).sqrt();
        let weight = Array2::from_shape_fn((out_channels, k), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(out_channels, |_| rng.random_range(-bound..bound));
        Self { weight, bias, in_channels, out_channels, kernel, stride, pad }
    }

    pub fn output_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, input: &Array3<f64>) -> Array2<f64> {
        let (in_c, h, w) = input.dim();
        debug_assert_eq!(in_c, self.in_channels);
        let (oh, ow) = self.output_spatial(h, w);
        let k = self.kernel;
        let mut patches = Array2::zeros((oh * ow, in_c * k * k));
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for ic in 0..in_c {
                    for ky in 0..k {
                        let y = (oy * self.stride + ky) as isize - self.pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let x = (ox * self.stride + kx) as isize - self.pad as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            patches[[row, (ic * k + ky) * k + kx]] =
                                input[[ic, y as usize, x as usize]];
                        }
                    }
                }
            }
        }
        patches
    }

    pub fn forward(&self, input: &Array3<f64>) -> (Array3<f64>, Conv2dCache) {
        let (_, h, w) = input.dim();
        let (oh, ow) = self.output_spatial(h, w);
        let patches = self.im2col(input);
        let out_mat = patches.dot(&self.weight.t());
        let mut out = Array3::zeros((self.out_channels, oh, ow));
        for oc in 0..self.out_channels {
            let b = self.bias[oc];
            for oy in 0..oh {
                for ox in 0..ow {
                    out[[oc, oy, ox]] = out_mat[[oy * ow + ox, oc]] + b;
                }
            }
        }
        let cache = Conv2dCache { patches, input_dim: input.dim(), output_dim: out.dim() };
        (out, cache)
    }

    /// Backward pass; returns the input gradient and parameter gradients.
    pub fn backward(
        &self,
        cache: &Conv2dCache,
        grad_out: &Array3<f64>,
    ) -> (Array3<f64>, Conv2dGrads) {
        debug_assert_eq!(grad_out.dim(), cache.output_dim);
        let (_, oh, ow) = cache.output_dim;
        let (in_c, h, w) = cache.input_dim;
        let k = self.kernel;

        let mut grad_out_mat = Array2::zeros((oh * ow, self.out_channels));
        for oc in 0..self.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    grad_out_mat[[oy * ow + ox, oc]] = grad_out[[oc, oy, ox]];
                }
            }
        }

        let grad_weight = grad_out_mat.t().dot(&cache.patches);
        let grad_bias = grad_out_mat.sum_axis(ndarray::Axis(0));
        let grad_patches = grad_out_mat.dot(&self.weight);

        // col2im: scatter patch gradients back onto the input grid.
        let mut grad_input = Array3::zeros((in_c, h, w));
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for ic in 0..in_c {
                    for ky in 0..k {
                        let y = (oy * self.stride + ky) as isize - self.pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let x = (ox * self.stride + kx) as isize - self.pad as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            grad_input[[ic, y as usize, x as usize]] +=
                                grad_patches[[row, (ic * k + ky) * k + kx]];
                        }
                    }
                }
            }
        }
        (grad_input, Conv2dGrads { weight: grad_weight, bias: grad_bias })
    }
}

/// Elementwise tanh; returns the output, which the backward pass reuses.
pub fn tanh_forward(input: &Array3<f64>) -> Array3<f64> {
    input.mapv(f64::tanh)
}

pub fn tanh_backward(output: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut grad = grad_out.clone();
    grad.zip_mut_with(output, |g, &y| *g *= 1.0 - y * y);
    grad
}

/// Elementwise softplus `ln(1 + e^x)`: smooth everywhere and unbounded
/// above, so encoder sensitivity is not capped the way saturating
/// activations cap it. The backward pass needs the pre-activation input.
pub fn softplus_forward(input: &Array3<f64>) -> Array3<f64> {
    input.mapv(|v| {
        if v > 30.0 {
            v
        } else {
            v.exp().ln_1p()
        }
    })
}

pub fn softplus_backward(input: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut grad = grad_out.clone();
    grad.zip_mut_with(input, |g, &x| *g *= 1.0 / (1.0 + (-x).exp()));
    grad
}

/// Elementwise logistic sigmoid.
pub fn sigmoid_forward(input: &Array3<f64>) -> Array3<f64> {
    input.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn sigmoid_backward(output: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut grad = grad_out.clone();
    grad.zip_mut_with(output, |g, &y| *g *= y * (1.0 - y));
    grad
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_forward(input: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = input.dim();
    let mut out = Array3::zeros((c, 2 * h, 2 * w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = input[[ch, y, x]];
                out[[ch, 2 * y, 2 * x]] = v;
                out[[ch, 2 * y + 1, 2 * x]] = v;
                out[[ch, 2 * y, 2 * x + 1]] = v;
                out[[ch, 2 * y + 1, 2 * x + 1]] = v;
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = grad_out.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                grad[[ch, y, x]] = grad_out[[ch, 2 * y, 2 * x]]
                    + grad_out[[ch, 2 * y + 1, 2 * x]]
                    + grad_out[[ch, 2 * y, 2 * x + 1]]
                    + grad_out[[ch, 2 * y + 1, 2 * x + 1]];
            }
        }
    }
    grad
}
