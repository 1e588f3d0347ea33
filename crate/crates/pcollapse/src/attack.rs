//! Projected sign-gradient attack on the encoder posterior.
//!
//! Each step follows `x <- clip(x + s * alpha * sign(grad_x L(x)))` with the
//! accumulated perturbation re-projected into the l-infinity epsilon ball,
//! where `L = criterion(encode(transform(x)), v)` and `s` is -1 to minimize
//! (concentration direction) or +1 to maximize (diffusion direction).
//! Pixels are additionally clamped to `[0, 1]` every step so the output is
//! always a savable image.

use std::time::Instant;

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_filter_raw;
use crate::image::ImageGrid;
use crate::posterior::{Criterion, PosteriorParams, TargetPrior};
use crate::vae::EncoderModel;

/// Anything the attack can differentiate through: a deterministic encoding
/// plus a vector-Jacobian product back to pixel space.
pub trait DifferentiableEncoder: Sync {
    fn encode(&self, image: &ImageGrid) -> Result<PosteriorParams>;

    /// Pixel gradient `(H, W, C)` of `sum_i (g_mu_i * mu_i + g_lv_i * lv_i)`
    /// for upstream cotangents `g_mu`, `g_lv`.
    fn input_gradient(
        &self,
        image: &ImageGrid,
        grad_mean: &[f64],
        grad_log_variance: &[f64],
    ) -> Result<Array3<f64>>;
}

impl DifferentiableEncoder for EncoderModel {
    fn encode(&self, image: &ImageGrid) -> Result<PosteriorParams> {
        EncoderModel::encode(self, image)
    }

    fn input_gradient(
        &self,
        image: &ImageGrid,
        grad_mean: &[f64],
        grad_log_variance: &[f64],
    ) -> Result<Array3<f64>> {
        let (_, trace) = self.encode_trace(image)?;
        let (grad, _) = self.backward(&trace, grad_mean, grad_log_variance);
        Ok(grad)
    }
}

/// Whether the attack drives the criterion down (PCA-) or up (PCA+).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackDirection {
    Minimize,
    Maximize,
}

impl AttackDirection {
    fn sign(&self) -> f64 {
        match self {
            AttackDirection::Minimize => -1.0,
            AttackDirection::Maximize => 1.0,
        }
    }
}

/// A differentiable transform placed before the encoder inside the gradient
/// path — the defense-in-the-loop realization of the adaptive attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InLoopTransform {
    /// Linear, so its gradient is exact; self-adjoint under reflect padding.
    GaussianBlur { kernel_size: usize, sigma: f64 },
}

impl InLoopTransform {
    fn validate(&self) -> Result<()> {
        match self {
            InLoopTransform::GaussianBlur { kernel_size, sigma } => {
                if kernel_size % 2 == 0 || *kernel_size == 0 {
                    return Err(Error::validation("in-loop blur kernel must be odd"));
                }
                if !(*sigma > 0.0) {
                    return Err(Error::validation("in-loop blur sigma must be > 0"));
                }
                Ok(())
            }
        }
    }

    fn forward(&self, image: &ImageGrid) -> Result<ImageGrid> {
        match self {
            InLoopTransform::GaussianBlur { kernel_size, sigma } => {
                ImageGrid::from_clamped(gaussian_filter_raw(image.pixels(), *kernel_size, *sigma))
            }
        }
    }

    fn backward(&self, grad: &Array3<f64>) -> Array3<f64> {
        match self {
            InLoopTransform::GaussianBlur { kernel_size, sigma } => {
                gaussian_filter_raw(grad, *kernel_size, *sigma)
            }
        }
    }
}

/// Attack hyperparameters. `epsilon` and `alpha` are in normalized pixel
/// units; the conventional 8-bit settings are `16/255` and `2/255`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    /// Target variance `v` of `p*(z) = N(0, vI)`.
    pub variance_target: f64,
    pub direction: AttackDirection,
    pub criterion: Criterion,
    #[serde(default)]
    pub in_loop_transform: Option<InLoopTransform>,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    /// Concentration attack: minimize toward `N(0, 1e-8 I)`.
    pub fn pca_minus() -> Self {
        Self {
            epsilon: 16.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps: 40,
            variance_target: 1e-8,
            direction: AttackDirection::Minimize,
            criterion: Criterion::ReverseKl,
            in_loop_transform: None,
            seed: 0,
        }
    }

    /// Diffusion attack: maximize away from `N(0, I)`.
    pub fn pca_plus() -> Self {
        Self {
            variance_target: 1.0,
            direction: AttackDirection::Maximize,
            ..Self::pca_minus()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::validation("epsilon must be finite and >= 0"));
        }
        if self.steps > 0 && !(self.alpha > 0.0) {
            return Err(Error::validation("alpha must be > 0 when steps > 0"));
        }
        TargetPrior::new(self.variance_target)?;
        if let Some(t) = &self.in_loop_transform {
            t.validate()?;
        }
        Ok(())
    }

    fn prior(&self) -> TargetPrior {
        TargetPrior { variance_scale: self.variance_target }
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::pca_minus()
    }
}

/// Everything one attack run produced.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: ImageGrid,
    /// `adversarial - original`, entrywise within `[-epsilon, epsilon]`.
    pub delta: Array3<f64>,
    /// Criterion value before each step and after the last (`steps + 1`
    /// entries), measured through the in-loop transform when one is set.
    pub loss_trace: Vec<f64>,
    /// Posterior of the clean image (no in-loop transform applied).
    pub posterior_before: PosteriorParams,
    /// Posterior of the adversarial image (no in-loop transform applied).
    pub posterior_after: PosteriorParams,
    pub elapsed_seconds: f64,
}

/// Clamp every entry of a perturbation into `[-epsilon, epsilon]`; idempotent.
pub fn project_linf(delta: &Array3<f64>, epsilon: f64) -> Result<Array3<f64>> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::validation("epsilon must be finite and >= 0"));
    }
    Ok(delta.mapv(|v| v.clamp(-epsilon, epsilon)))
}

/// Clamp every pixel into `[0, 1]`; idempotent.
pub fn clip_valid(pixels: &Array3<f64>) -> Array3<f64> {
    pixels.mapv(|v| v.clamp(0.0, 1.0))
}

fn objective<E: DifferentiableEncoder>(
    encoder: &E,
    config: &AttackConfig,
    image: &ImageGrid,
) -> Result<f64> {
    let seen = match &config.in_loop_transform {
        Some(t) => t.forward(image)?,
        None => image.clone(),
    };
    let post = encoder.encode(&seen)?;
    config.criterion.attack_value(&post, &config.prior())
}

fn objective_gradient<E: DifferentiableEncoder>(
    encoder: &E,
    config: &AttackConfig,
    image: &ImageGrid,
) -> Result<Array3<f64>> {
    let seen = match &config.in_loop_transform {
        Some(t) => t.forward(image)?,
        None => image.clone(),
    };
    let post = encoder.encode(&seen)?;
    let (g_mu, g_lv) = config.criterion.gradient(&post, &config.prior());
    let grad = encoder.input_gradient(&seen, &g_mu, &g_lv)?;
    Ok(match &config.in_loop_transform {
        Some(t) => t.backward(&grad),
        None => grad,
    })
}

/// Run the projected sign-gradient attack on one image.
///
/// Deterministic for a fixed image, model, and config; random state is never
/// consulted. Aborts with the offending step index if the gradient turns
/// non-finite (the collapse loss at `v = 1e-8` is large enough that overflow
/// must be loud, not skipped).
pub fn pca_attack<E: DifferentiableEncoder>(
    image: &ImageGrid,
    encoder: &E,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    let start = Instant::now();
    let posterior_before = encoder.encode(image)?;
    let sign_factor = config.direction.sign();

    let original = image.pixels();
    let mut current = image.clone();
    let mut loss_trace = Vec::with_capacity(config.steps + 1);
    loss_trace.push(objective(encoder, config, &current)?);

    for step in 0..config.steps {
        let grad = objective_gradient(encoder, config, &current)?;
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient { step });
        }
        let stepped = current.pixels()
            + &grad.mapv(|g| sign_factor * config.alpha * if g > 0.0 { 1.0 } else if g < 0.0 { -1.0 } else { 0.0 });
        let clipped = clip_valid(&stepped);
        let delta = project_linf(&(&clipped - original), config.epsilon)?;
        current = ImageGrid::from_clamped(original + &delta)?;
        loss_trace.push(objective(encoder, config, &current)?);
    }

    let delta = current.pixels() - original;
    let posterior_after = encoder.encode(&current)?;
    Ok(AttackResult {
        adversarial: current,
        delta,
        loss_trace,
        posterior_before,
        posterior_after,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Attack a batch; per-image failures are recorded and the batch continues.
///
/// Each image runs with a per-image seed `config.seed + index`, so results
/// are identical to individual calls and order-preserving.
pub fn attack_batch<E: DifferentiableEncoder>(
    images: &[ImageGrid],
    encoder: &E,
    config: &AttackConfig,
) -> Vec<Result<AttackResult>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, image)| {
            let per_image = AttackConfig { seed: config.seed + i as u64, ..config.clone() };
            pca_attack(image, encoder, &per_image)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    /// One-pixel "encoder": mu = x, log sigma^2 = 0. With v = 1 the reverse
    /// KL surrogate is mu^2 / 2, so sign(grad) follows sign(x).
    struct LinearToyEncoder;

    impl DifferentiableEncoder for LinearToyEncoder {
        fn encode(&self, image: &ImageGrid) -> Result<PosteriorParams> {
            PosteriorParams::new(image.pixels().iter().copied().collect(), vec![
                0.0;
                image.pixels().len()
            ])
        }

        fn input_gradient(
            &self,
            image: &ImageGrid,
            grad_mean: &[f64],
            _grad_log_variance: &[f64],
        ) -> Result<Array3<f64>> {
            let mut grad = Array3::zeros(image.dim());
            for (g, &gm) in grad.iter_mut().zip(grad_mean) {
                *g = gm;
            }
            Ok(grad)
        }
    }

    /// Encoder whose gradient blows up, for the abort path.
    struct ExplodingEncoder;

    impl DifferentiableEncoder for ExplodingEncoder {
        fn encode(&self, image: &ImageGrid) -> Result<PosteriorParams> {
            PosteriorParams::new(vec![image.pixels()[[0, 0, 0]]], vec![0.0])
        }

        fn input_gradient(
            &self,
            image: &ImageGrid,
            _grad_mean: &[f64],
            _grad_log_variance: &[f64],
        ) -> Result<Array3<f64>> {
            Ok(Array3::from_elem(image.dim(), f64::NAN))
        }
    }

    fn scalar_image(value: f64) -> ImageGrid {
        ImageGrid::constant(1, 1, 1, value).unwrap()
    }

    fn toy_config(direction: AttackDirection, steps: usize) -> AttackConfig {
        AttackConfig {
            epsilon: 16.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps,
            variance_target: 1.0,
            direction,
            criterion: Criterion::ReverseKl,
            in_loop_transform: None,
            seed: 0,
        }
    }

    #[test]
    fn project_linf_clamps_entrywise() {
        let delta = Array3::from_shape_vec((1, 2, 1), vec![0.1, -0.02]).unwrap();
        let eps = 16.0 / 255.0;
        let out = project_linf(&delta, eps).unwrap();
        assert_eq!(out[[0, 0, 0]], eps);
        assert_eq!(out[[0, 1, 0]], -0.02);
        // Idempotent, zero unchanged, zero budget zeroes everything.
        assert_eq!(project_linf(&out, eps).unwrap(), out);
        let zero = Array3::zeros((2, 2, 1));
        assert_eq!(project_linf(&zero, eps).unwrap(), zero);
        assert_eq!(project_linf(&delta, 0.0).unwrap(), zero.slice(ndarray::s![0..1, 0..2, ..]).to_owned());
        assert!(project_linf(&delta, -0.5).is_err());
    }

    #[test]
    fn clip_valid_clamps_to_unit_range() {
        let arr = Array3::from_shape_vec((1, 3, 1), vec![1.2, 0.5, -0.3]).unwrap();
        let out = clip_valid(&arr);
        assert_eq!(out.as_slice().unwrap(), &[1.0, 0.5, 0.0]);
        assert_eq!(clip_valid(&out), out);
    }

    #[test]
    fn zero_steps_returns_original() {
        let img = scalar_image(0.5);
        let result = pca_attack(&img, &LinearToyEncoder, &toy_config(AttackDirection::Minimize, 0)).unwrap();
        assert_eq!(result.adversarial, img);
        assert!(result.delta.iter().all(|&v| v == 0.0));
        assert_eq!(result.loss_trace.len(), 1);
    }

    #[test]
    fn analytic_minimize_trace() {
        let img = scalar_image(0.5);
        let result = pca_attack(&img, &LinearToyEncoder, &toy_config(AttackDirection::Minimize, 4)).unwrap();
        let expected = 0.5 - 8.0 / 255.0;
        let got = result.adversarial.pixels()[[0, 0, 0]];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        // Loss = mu^2 / 2 strictly decreases while unprojected.
        for w in result.loss_trace.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn analytic_maximize_trace() {
        let img = scalar_image(0.5);
        let result = pca_attack(&img, &LinearToyEncoder, &toy_config(AttackDirection::Maximize, 4)).unwrap();
        let expected = 0.5 + 8.0 / 255.0;
        let got = result.adversarial.pixels()[[0, 0, 0]];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        for w in result.loss_trace.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn projection_binds_at_many_steps() {
        let img = scalar_image(0.5);
        let config = toy_config(AttackDirection::Maximize, 40);
        let result = pca_attack(&img, &LinearToyEncoder, &config).unwrap();
        let linf = result.delta.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(linf <= config.epsilon + 1e-6);
        assert!((result.adversarial.pixels()[[0, 0, 0]] - (0.5 + 16.0 / 255.0)).abs() < 1e-12);
    }

    #[test]
    fn attack_is_deterministic() {
        let img = scalar_image(0.37);
        let config = toy_config(AttackDirection::Minimize, 10);
        let a = pca_attack(&img, &LinearToyEncoder, &config).unwrap();
        let b = pca_attack(&img, &LinearToyEncoder, &config).unwrap();
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn non_finite_gradient_aborts_with_step_index() {
        let img = scalar_image(0.5);
        match pca_attack(&img, &ExplodingEncoder, &toy_config(AttackDirection::Minimize, 3)) {
            Err(Error::NonFiniteGradient { step: 0 }) => {}
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn batch_matches_single_calls_and_preserves_order() {
        let images: Vec<ImageGrid> = [0.2, 0.5, 0.8].iter().map(|&v| scalar_image(v)).collect();
        let config = toy_config(AttackDirection::Minimize, 6);
        let batch = attack_batch(&images, &LinearToyEncoder, &config);
        assert_eq!(batch.len(), 3);
        for (i, item) in batch.iter().enumerate() {
            let single_config = AttackConfig { seed: config.seed + i as u64, ..config.clone() };
            let single = pca_attack(&images[i], &LinearToyEncoder, &single_config).unwrap();
            let got = item.as_ref().unwrap();
            assert_eq!(got.delta, single.delta);
            assert_eq!(got.loss_trace, single.loss_trace);
        }
        // Permuting inputs permutes outputs identically.
        let permuted: Vec<ImageGrid> = vec![images[2].clone(), images[0].clone(), images[1].clone()];
        let batch_p = attack_batch(&permuted, &LinearToyEncoder, &config);
        assert_eq!(
            batch_p[0].as_ref().unwrap().adversarial,
            batch[2].as_ref().unwrap().adversarial
        );
    }

    #[test]
    fn batch_records_failures_and_continues() {
        let images = vec![scalar_image(0.4), scalar_image(0.6)];
        let config = toy_config(AttackDirection::Minimize, 2);
        let batch = attack_batch(&images, &ExplodingEncoder, &config);
        assert_eq!(batch.len(), 2);
        assert!(batch.iter().all(|r| r.is_err()));
    }

    #[test]
    fn config_validation() {
        let mut config = AttackConfig::pca_minus();
        config.epsilon = -0.1;
        assert!(config.validate().is_err());
        let mut config = AttackConfig::pca_minus();
        config.alpha = 0.0;
        assert!(config.validate().is_err());
        let mut config = AttackConfig::pca_minus();
        config.variance_target = 0.0;
        assert!(config.validate().is_err());
        let mut config = AttackConfig::pca_minus();
        config.steps = 0;
        config.alpha = 0.0;
        assert!(config.validate().is_ok());
        config.in_loop_transform = Some(InLoopTransform::GaussianBlur { kernel_size: 4, sigma: 0.8 });
        assert!(config.validate().is_err());
    }
}
