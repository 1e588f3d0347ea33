//! Desk-scale convolutional VAE: the surrogate encoder under attack.
//!
//! The encoder downsamples by a factor of 4 (two stride-2 convolutions plus
//! one stride-1 block) and emits per-position mean and log-variance over
//! `latent_channels` channels, so `d = (H/4) * (W/4) * latent_channels`.
//! The decoder mirrors it with nearest-neighbor upsampling and a sigmoid
//! output, keeping reconstructions inside `[0, 1]`.
//!
//! Encoding is deterministic; models are immutable after construction and
//! safe to share across threads.

pub mod checkpoint;
pub mod layers;
pub mod train;

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::posterior::{kl_to_isotropic, PosteriorParams, TargetPrior};
use layers::{
    sigmoid_backward, sigmoid_forward, softplus_backward, softplus_forward, upsample2_backward,
    upsample2_forward, Conv2d, Conv2dCache, Conv2dGrads,
};

/// Log-variance head clamp; keeps `sigma^2` finite under adversarial inputs.
pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;

/// Architecture hyperparameters carried by every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    /// Training image height.
    pub image_height: usize,
    /// Training image width.
    pub image_width: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub input_channels: usize,
    /// Width of the first hidden block; the second uses twice this.
    pub base_channels: usize,
    /// Latent channels per spatial position.
    pub latent_channels: usize,
}

impl VaeArch {
    /// Spatial downsampling factor of the encoder.
    pub const DOWNSAMPLE: usize = 4;

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::validation("input_channels must be 1 or 3"));
        }
        if self.base_channels == 0 || self.latent_channels == 0 {
            return Err(Error::validation("channel counts must be >= 1"));
        }
        if self.image_height % Self::DOWNSAMPLE != 0
            || self.image_width % Self::DOWNSAMPLE != 0
            || self.image_height == 0
            || self.image_width == 0
        {
            return Err(Error::validation(format!(
                "image size {}x{} must be a positive multiple of {}",
                self.image_height,
                self.image_width,
                Self::DOWNSAMPLE
            )));
        }
        Ok(())
    }

    /// Latent dimensionality for an input of the given spatial size.
    pub fn latent_dim_for(&self, height: usize, width: usize) -> usize {
        (height / Self::DOWNSAMPLE) * (width / Self::DOWNSAMPLE) * self.latent_channels
    }

    /// Latent dimensionality at the native training resolution.
    pub fn latent_dim(&self) -> usize {
        self.latent_dim_for(self.image_height, self.image_width)
    }
}

impl Default for VaeArch {
    fn default() -> Self {
        Self {
            image_height: 32,
            image_width: 32,
            input_channels: 3,
            base_channels: 16,
            latent_channels: 4,
        }
    }
}

/// Convolutional encoder producing a diagonal-Gaussian posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub arch: VaeArch,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    conv4: Conv2d,
    head_mean: Conv2d,
    head_logvar: Conv2d,
}

/// Convolutional decoder mapping latents back to pixel space.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub arch: VaeArch,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    conv4: Conv2d,
}

/// Caches from one encoder forward pass, consumed by the backward pass.
pub struct EncoderTrace {
    c1: Conv2dCache,
    z1: Array3<f64>,
    c2: Conv2dCache,
    z2: Array3<f64>,
    c3: Conv2dCache,
    z3: Array3<f64>,
    c4: Conv2dCache,
    z4: Array3<f64>,
    cm: Conv2dCache,
    cl: Conv2dCache,
    logvar_raw: Array3<f64>,
    spatial: (usize, usize),
}

/// Parameter gradients of the encoder, ordered as [`EncoderModel::layers`].
pub struct EncoderGrads {
    pub layers: Vec<Conv2dGrads>,
}

/// Parameter gradients of the decoder, ordered as [`DecoderModel::layers`].
pub struct DecoderGrads {
    pub layers: Vec<Conv2dGrads>,
}

pub(crate) fn hwc_to_chw(image: &ImageGrid) -> Array3<f64> {
    let (h, w, c) = image.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| image.pixels()[[y, x, ch]])
}

pub(crate) fn chw_to_hwc(arr: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = arr.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ch)| arr[[ch, y, x]])
}

impl EncoderModel {
    pub fn new(arch: VaeArch, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let b = arch.base_channels;
        let mut head_logvar = Conv2d::init(2 * b, arch.latent_channels, 1, 1, 0, rng);
        // Start with a near-deterministic posterior (sigma^2 ~ e^-4) so the
        // reparameterized sample is signal, not noise, from the first step;
        // otherwise the decoder learns to ignore the latent entirely.
        head_logvar.bias.fill(-4.0);
        Ok(Self {
            arch,
            conv1: Conv2d::init(arch.input_channels, b, 3, 2, 1, rng),
            conv2: Conv2d::init(b, 2 * b, 3, 2, 1, rng),
            conv3: Conv2d::init(2 * b, 2 * b, 3, 1, 1, rng),
            conv4: Conv2d::init(2 * b, 2 * b, 3, 1, 1, rng),
            head_mean: Conv2d::init(2 * b, arch.latent_channels, 1, 1, 0, rng),
            head_logvar,
        })
    }

    /// Check shape preconditions for `encode`.
    pub fn validate_input(&self, image: &ImageGrid) -> Result<()> {
        let (h, w, c) = image.dim();
        if c != self.arch.input_channels {
            return Err(Error::validation(format!(
                "encoder expects {} channels, image has {c}",
                self.arch.input_channels
            )));
        }
        if h % VaeArch::DOWNSAMPLE != 0 || w % VaeArch::DOWNSAMPLE != 0 {
            return Err(Error::validation(format!(
                "image size {h}x{w} not divisible by downsample factor {}",
                VaeArch::DOWNSAMPLE
            )));
        }
        Ok(())
    }

    /// Deterministic encoding to posterior parameters.
    ///
    /// The flattened latent order is channel-major: index
    /// `c * (H/4 * W/4) + y * (W/4) + x`.
    pub fn encode(&self, image: &ImageGrid) -> Result<PosteriorParams> {
        let (post, _) = self.encode_trace(image)?;
        Ok(post)
    }

    /// Encoding plus the caches needed for a backward pass.
    pub fn encode_trace(&self, image: &ImageGrid) -> Result<(PosteriorParams, EncoderTrace)> {
        self.validate_input(image)?;
        self.encode_trace_chw(&hwc_to_chw(image))
    }

    pub(crate) fn encode_trace_chw(
        &self,
        chw: &Array3<f64>,
    ) -> Result<(PosteriorParams, EncoderTrace)> {
        let (z1, c1) = self.conv1.forward(chw);
        let a1 = softplus_forward(&z1);
        let (z2, c2) = self.conv2.forward(&a1);
        let a2 = softplus_forward(&z2);
        let (z3, c3) = self.conv3.forward(&a2);
        let a3 = softplus_forward(&z3);
        let (z4, c4) = self.conv4.forward(&a3);
        let a4 = softplus_forward(&z4);
        let (mean_map, cm) = self.head_mean.forward(&a4);
        let (logvar_raw, cl) = self.head_logvar.forward(&a4);
        let logvar_map = logvar_raw.mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));

        let mean: Vec<f64> = mean_map.iter().copied().collect();
        let log_variance: Vec<f64> = logvar_map.iter().copied().collect();
        let spatial = (mean_map.dim().1, mean_map.dim().2);
        let post = PosteriorParams::new(mean, log_variance)?;
        Ok((post, EncoderTrace { c1, z1, c2, z2, c3, z3, c4, z4, cm, cl, logvar_raw, spatial }))
    }

    /// Backpropagate posterior-space gradients to the input image.
    ///
    /// Returns the `(H, W, C)` pixel gradient and the parameter gradients.
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        grad_mean: &[f64],
        grad_log_variance: &[f64],
    ) -> (Array3<f64>, EncoderGrads) {
        let (sh, sw) = trace.spatial;
        let cz = self.arch.latent_channels;
        let to_map = |flat: &[f64]| {
            Array3::from_shape_fn((cz, sh, sw), |(c, y, x)| flat[c * sh * sw + y * sw + x])
        };
        let grad_mean_map = to_map(grad_mean);
        let mut grad_logvar_map = to_map(grad_log_variance);
        // Clamp backward: no gradient where the raw head output was cut off.
        grad_logvar_map.zip_mut_with(&trace.logvar_raw, |g, &raw| {
            if !(LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
                *g = 0.0;
            }
        });

        let (g_mean_in, g_head_mean) = self.head_mean.backward(&trace.cm, &grad_mean_map);
        let (g_logvar_in, g_head_logvar) = self.head_logvar.backward(&trace.cl, &grad_logvar_map);
        let g_a4 = &g_mean_in + &g_logvar_in;
        let g_z4 = softplus_backward(&trace.z4, &g_a4);
        let (g_a3, g_conv4) = self.conv4.backward(&trace.c4, &g_z4);
        let g_z3 = softplus_backward(&trace.z3, &g_a3);
        let (g_a2, g_conv3) = self.conv3.backward(&trace.c3, &g_z3);
        let g_z2 = softplus_backward(&trace.z2, &g_a2);
        let (g_a1, g_conv2) = self.conv2.backward(&trace.c2, &g_z2);
        let g_z1 = softplus_backward(&trace.z1, &g_a1);
        let (g_input, g_conv1) = self.conv1.backward(&trace.c1, &g_z1);

        (
            chw_to_hwc(&g_input),
            EncoderGrads {
                layers: vec![g_conv1, g_conv2, g_conv3, g_conv4, g_head_mean, g_head_logvar],
            },
        )
    }

    pub(crate) fn layers(&self) -> Vec<&Conv2d> {
        vec![
            &self.conv1,
            &self.conv2,
            &self.conv3,
            &self.conv4,
            &self.head_mean,
            &self.head_logvar,
        ]
    }

    pub(crate) fn layers_mut(&mut self) -> Vec<&mut Conv2d> {
        vec![
            &mut self.conv1,
            &mut self.conv2,
            &mut self.conv3,
            &mut self.conv4,
            &mut self.head_mean,
            &mut self.head_logvar,
        ]
    }

    pub(crate) fn layer_names() -> &'static [&'static str] {
        &[
            "enc.conv1",
            "enc.conv2",
            "enc.conv3",
            "enc.conv4",
            "enc.head_mean",
            "enc.head_logvar",
        ]
    }
}

/// Caches from one decoder forward pass.
pub struct DecoderTrace {
    c1: Conv2dCache,
    z1: Array3<f64>,
    c2: Conv2dCache,
    z2: Array3<f64>,
    c3: Conv2dCache,
    z3: Array3<f64>,
    c4: Conv2dCache,
    output: Array3<f64>,
}

impl DecoderModel {
    pub fn new(arch: VaeArch, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let b = arch.base_channels;
        Ok(Self {
            arch,
            conv1: Conv2d::init(arch.latent_channels, 2 * b, 3, 1, 1, rng),
            conv2: Conv2d::init(2 * b, b, 3, 1, 1, rng),
            conv3: Conv2d::init(b, b, 3, 1, 1, rng),
            conv4: Conv2d::init(b, arch.input_channels, 3, 1, 1, rng),
        })
    }

    /// Decode a flat latent (channel-major order) into an image.
    pub fn decode(&self, latent: &[f64]) -> Result<ImageGrid> {
        let (out, _) = self.decode_trace(latent)?;
        ImageGrid::from_clamped(chw_to_hwc(&out))
    }

    pub(crate) fn decode_trace(&self, latent: &[f64]) -> Result<(Array3<f64>, DecoderTrace)> {
        let d = self.arch.latent_dim();
        if latent.len() != d {
            return Err(Error::validation(format!(
                "latent length {} does not match model dimension {d}",
                latent.len()
            )));
        }
        if !latent.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("latent entries must be finite"));
        }
        let (sh, sw) = (
            self.arch.image_height / VaeArch::DOWNSAMPLE,
            self.arch.image_width / VaeArch::DOWNSAMPLE,
        );
        let cz = self.arch.latent_channels;
        let z = Array3::from_shape_fn((cz, sh, sw), |(c, y, x)| latent[c * sh * sw + y * sw + x]);

        let (z1, c1) = self.conv1.forward(&z);
        let a1 = softplus_forward(&z1);
        let up1 = upsample2_forward(&a1);
        let (z2, c2) = self.conv2.forward(&up1);
        let a2 = softplus_forward(&z2);
        let up2 = upsample2_forward(&a2);
        let (z3, c3) = self.conv3.forward(&up2);
        let a3 = softplus_forward(&z3);
        let (z4, c4) = self.conv4.forward(&a3);
        let output = sigmoid_forward(&z4);
        Ok((output.clone(), DecoderTrace { c1, z1, c2, z2, c3, z3, c4, output }))
    }

    /// Backpropagate a pixel-space gradient (CHW) to the latent.
    pub(crate) fn backward(
        &self,
        trace: &DecoderTrace,
        grad_output: &Array3<f64>,
    ) -> (Vec<f64>, DecoderGrads) {
        let g_z4 = sigmoid_backward(&trace.output, grad_output);
        let (g_a3, g_conv4) = self.conv4.backward(&trace.c4, &g_z4);
        let g_z3 = softplus_backward(&trace.z3, &g_a3);
        let (g_up2, g_conv3) = self.conv3.backward(&trace.c3, &g_z3);
        let g_a2 = upsample2_backward(&g_up2);
        let g_z2 = softplus_backward(&trace.z2, &g_a2);
        let (g_up1, g_conv2) = self.conv2.backward(&trace.c2, &g_z2);
        let g_a1 = upsample2_backward(&g_up1);
        let g_z1 = softplus_backward(&trace.z1, &g_a1);
        let (g_latent, g_conv1) = self.conv1.backward(&trace.c1, &g_z1);
        (
            g_latent.iter().copied().collect(),
            DecoderGrads { layers: vec![g_conv1, g_conv2, g_conv3, g_conv4] },
        )
    }

    pub(crate) fn layers(&self) -> Vec<&Conv2d> {
        vec![&self.conv1, &self.conv2, &self.conv3, &self.conv4]
    }

    pub(crate) fn layers_mut(&mut self) -> Vec<&mut Conv2d> {
        vec![&mut self.conv1, &mut self.conv2, &mut self.conv3, &mut self.conv4]
    }

    pub(crate) fn layer_names() -> &'static [&'static str] {
        &["dec.conv1", "dec.conv2", "dec.conv3", "dec.conv4"]
    }
}

/// Reparameterized draw `mu + sigma * eta` with `eta ~ N(0, I)` from a
/// seeded generator; the same seed yields the same vector.
pub fn sample_latent(post: &PosteriorParams, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    post.mean
        .iter()
        .zip(&post.log_variance)
        .map(|(&mu, &lv)| {
            let eta: f64 = rng.sample(StandardNormal);
            mu + (0.5 * lv).exp() * eta
        })
        .collect()
}

/// Whether reconstruction decodes the posterior mean or one sampled latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionMode {
    Mean,
    Sample,
}

/// Encode and decode an image through the VAE.
pub fn reconstruct(
    encoder: &EncoderModel,
    decoder: &DecoderModel,
    image: &ImageGrid,
    mode: ReconstructionMode,
    seed: u64,
) -> Result<ImageGrid> {
    let post = encoder.encode(image)?;
    let latent = match mode {
        ReconstructionMode::Mean => post.mean.clone(),
        ReconstructionMode::Sample => sample_latent(&post, seed),
    };
    decoder.decode(&latent)
}

/// Pixel reconstruction error plus `beta`-weighted KL to the standard
/// normal prior. Deterministic: the reconstruction decodes the posterior
/// mean. The KL term is exactly `kl_to_isotropic` at `v = 1`.
pub fn elbo_loss(
    encoder: &EncoderModel,
    decoder: &DecoderModel,
    image: &ImageGrid,
    beta: f64,
) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::validation("beta must be >= 0"));
    }
    let post = encoder.encode(image)?;
    let recon = decoder.decode(&post.mean)?;
    let recon_term: f64 = recon
        .pixels()
        .iter()
        .zip(image.pixels().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let kl = kl_to_isotropic(&post, &TargetPrior::standard())?;
    Ok(recon_term + beta * kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn test_models(seed: u64) -> (EncoderModel, DecoderModel) {
        let arch = VaeArch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = EncoderModel::new(arch, &mut rng).unwrap();
        let dec = DecoderModel::new(arch, &mut rng).unwrap();
        (enc, dec)
    }

    fn test_image(seed: u64) -> ImageGrid {
        let mut arr = Array3::zeros((32, 32, 3));
        let mut state = seed;
        for v in arr.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (state >> 33) as f64 / (1u64 << 31) as f64;
        }
        ImageGrid::new(arr).unwrap()
    }

    #[test]
    fn latent_dimension_follows_shape_law() {
        let (enc, _) = test_models(0);
        let img = test_image(1);
        let post = enc.encode(&img).unwrap();
        assert_eq!(post.dim(), 8 * 8 * 4);
        assert_eq!(post.dim(), enc.arch.latent_dim_for(32, 32));
    }

    #[test]
    fn encode_is_deterministic_and_finite() {
        let (enc, _) = test_models(0);
        let img = test_image(2);
        let a = enc.encode(&img).unwrap();
        let b = enc.encode(&img).unwrap();
        assert_eq!(a, b);
        assert!(a.mean.iter().all(|v| v.is_finite()));
        assert!(a.log_variance.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encode_rejects_indivisible_size() {
        let (enc, _) = test_models(0);
        let img = ImageGrid::constant(30, 32, 3, 0.5).unwrap();
        assert!(enc.encode(&img).is_err());
        let img = ImageGrid::constant(32, 32, 1, 0.5).unwrap();
        assert!(enc.encode(&img).is_err());
    }

    #[test]
    fn sample_latent_is_seeded_and_degenerate_at_zero_variance() {
        let post = PosteriorParams::new(vec![0.3, -0.7], vec![LOGVAR_MIN, LOGVAR_MIN]).unwrap();
        let z = sample_latent(&post, 9);
        assert!((z[0] - 0.3).abs() < 1e-6);
        assert!((z[1] + 0.7).abs() < 1e-6);
        let post = PosteriorParams::new(vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert_eq!(sample_latent(&post, 5), sample_latent(&post, 5));
        assert_ne!(sample_latent(&post, 5), sample_latent(&post, 6));
    }

    #[test]
    fn sample_latent_mean_obeys_clt_bound() {
        let post = PosteriorParams::new(vec![1.5, -0.5], vec![0.3, -0.8]).unwrap();
        let n = 100_000;
        let mut sums = vec![0.0; 2];
        for seed in 0..n {
            let z = sample_latent(&post, seed as u64);
            sums[0] += z[0];
            sums[1] += z[1];
        }
        for i in 0..2 {
            let sample_mean = sums[i] / n as f64;
            let sigma = (0.5 * post.log_variance[i]).exp();
            let bound = 3.0 * sigma / (n as f64).sqrt();
            assert!(
                (sample_mean - post.mean[i]).abs() < bound,
                "dim {i}: {sample_mean} vs {} (bound {bound})",
                post.mean[i]
            );
        }
    }

    #[test]
    fn decode_output_in_unit_range_and_deterministic() {
        let (_, dec) = test_models(3);
        let latent = vec![0.25; dec.arch.latent_dim()];
        let a = dec.decode(&latent).unwrap();
        let b = dec.decode(&latent).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), (32, 32, 3));
        // Zero latent also decodes to a finite, in-range image.
        let z = dec.decode(&vec![0.0; dec.arch.latent_dim()]).unwrap();
        assert!(z.pixels().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn decode_rejects_wrong_latent_length() {
        let (_, dec) = test_models(3);
        assert!(dec.decode(&vec![0.0; 7]).is_err());
    }

    #[test]
    fn reconstruct_untrained_stays_in_range_and_mean_mode_is_deterministic() {
        let (enc, dec) = test_models(4);
        let img = test_image(5);
        let r1 = reconstruct(&enc, &dec, &img, ReconstructionMode::Mean, 0).unwrap();
        let r2 = reconstruct(&enc, &dec, &img, ReconstructionMode::Mean, 99).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let s1 = reconstruct(&enc, &dec, &img, ReconstructionMode::Sample, 7).unwrap();
        let s2 = reconstruct(&enc, &dec, &img, ReconstructionMode::Sample, 7).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn elbo_kl_term_matches_posterior_core() {
        let (enc, dec) = test_models(6);
        let img = test_image(7);
        let with_kl = elbo_loss(&enc, &dec, &img, 1.0).unwrap();
        let without = elbo_loss(&enc, &dec, &img, 0.0).unwrap();
        let kl_direct =
            kl_to_isotropic(&enc.encode(&img).unwrap(), &TargetPrior::standard()).unwrap();
        let diff = (with_kl - without) - kl_direct;
        assert!(diff.abs() / kl_direct.abs().max(1.0) < 1e-9);
    }

    #[test]
    fn encoder_input_gradient_matches_finite_differences() {
        let (enc, _) = test_models(8);
        let img = test_image(9);
        let prior = TargetPrior::standard();
        let criterion = crate::posterior::Criterion::ReverseKl;

        let loss_of = |image: &ImageGrid| -> f64 {
            let post = enc.encode(image).unwrap();
            criterion.attack_value(&post, &prior).unwrap()
        };
        let (post, trace) = enc.encode_trace(&img).unwrap();
        let (gm, glv) = criterion.gradient(&post, &prior);
        let (grad, _) = enc.backward(&trace, &gm, &glv);

        let h = 1e-4;
        let mut checked = 0;
        let mut ok = 0;
        for idx in (0..img.pixels().len()).step_by(97) {
            let mut plus = img.pixels().clone();
            let mut minus = img.pixels().clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            minus.as_slice_mut().unwrap()[idx] -= h;
            let fp = loss_of(&ImageGrid::from_clamped(plus).unwrap());
            let fm = loss_of(&ImageGrid::from_clamped(minus).unwrap());
            let fd = (fp - fm) / (2.0 * h);
            let an = grad.as_slice().unwrap()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-9);
            checked += 1;
            if rel < 1e-3 {
                ok += 1;
            }
        }
        assert!(ok * 100 >= checked * 95, "only {ok}/{checked} coords matched");
    }
}
