//! Purification transforms evaluated against the attack.
//!
//! Three defenses: a small Gaussian blur, a JPEG encode-decode round trip,
//! and `filter_clean`, an edge-preserving smoother with high-frequency
//! residual suppression in the style of filter-based perturbation removers.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{gaussian_filter_raw, reflect_index};
use crate::image::ImageGrid;

/// A defense transform plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseSpec {
    /// Pass-through.
    Identity,
    /// Channelwise Gaussian blur.
    GaussianBlur {
        #[serde(default = "default_blur_kernel")]
        kernel_size: usize,
        #[serde(default = "default_blur_sigma")]
        sigma: f64,
    },
    /// JPEG encode-decode degradation at the given quality.
    Jpeg { quality: u8 },
    /// Iterated edge-preserving smoothing + residual suppression.
    FilterClean {
        #[serde(default = "default_clean_iterations")]
        iterations: usize,
    },
}

fn default_blur_kernel() -> usize {
    3
}

fn default_blur_sigma() -> f64 {
    0.8
}

fn default_clean_iterations() -> usize {
    4
}

impl DefenseSpec {
    /// Short name used in report columns and file names.
    pub fn label(&self) -> String {
        match self {
            DefenseSpec::Identity => "identity".into(),
            DefenseSpec::GaussianBlur { kernel_size, .. } => format!("blur{kernel_size}"),
            DefenseSpec::Jpeg { quality } => format!("jpeg{quality}"),
            DefenseSpec::FilterClean { iterations } => format!("clean{iterations}"),
        }
    }
}

/// Channelwise convolution with a normalized Gaussian kernel, reflect padding.
pub fn gaussian_blur(image: &ImageGrid, kernel_size: usize, sigma: f64) -> Result<ImageGrid> {
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return Err(Error::validation(format!(
            "blur kernel size must be odd, got {kernel_size}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::validation("blur sigma must be > 0"));
    }
    let out = gaussian_filter_raw(image.pixels(), kernel_size, sigma);
    ImageGrid::from_clamped(out)
}

/// JPEG encode-decode round trip at `quality` in `[1, 100]`, in memory.
pub fn jpeg_compress(image: &ImageGrid, quality: u8) -> Result<ImageGrid> {
    if !(1..=100).contains(&quality) {
        return Err(Error::validation(format!(
            "jpeg quality must be in [1, 100], got {quality}"
        )));
    }
    let (h, w, c) = image.dim();
    let raw: Vec<u8> = image
        .pixels()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let mut bytes = Vec::new();
    let mut cursor = std::io::Cursor::new(&mut bytes);
    let mut encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut cursor, quality);
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    encoder.encode(&raw, w as u32, h as u32, color)?;
    let decoded = ImageGrid::from_png_like_bytes(&bytes, c)?;
    if decoded.dim() != (h, w, c) {
        return Err(Error::validation("jpeg round trip changed image shape"));
    }
    Ok(decoded)
}

impl ImageGrid {
    // JPEG decoding shares the in-memory path with PNG but must preserve the
    // caller's channel count (jpeg promotes grayscale on some decoders).
    fn from_png_like_bytes(bytes: &[u8], channels: usize) -> Result<Self> {
        let dyn_img = image::load_from_memory(bytes)?;
        let img = if channels == 1 {
            image::DynamicImage::ImageLuma8(dyn_img.into_luma8())
        } else {
            image::DynamicImage::ImageRgb8(dyn_img.into_rgb8())
        };
        let mut buf = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)?;
        ImageGrid::from_png_bytes(&buf)
    }
}

/// One bilateral-style pass: weights combine a spatial Gaussian with a range
/// Gaussian on per-pixel color distance, so edges survive smoothing.
fn bilateral_pass(arr: &Array3<f64>, radius: isize, spatial_sigma: f64, range_sigma: f64) -> Array3<f64> {
    let (h, w, c) = arr.dim();
    let mut out = Array3::zeros((h, w, c));
    let inv_2ss = 1.0 / (2.0 * spatial_sigma * spatial_sigma);
    let inv_2rs = 1.0 / (2.0 * range_sigma * range_sigma);
    for y in 0..h {
        for x in 0..w {
            let mut weight_sum = 0.0;
            let mut acc = vec![0.0; c];
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let yy = reflect_index(y as isize + dy, h);
                    let xx = reflect_index(x as isize + dx, w);
                    let mut color_sq = 0.0;
                    for ch in 0..c {
                        let diff = arr[[yy, xx, ch]] - arr[[y, x, ch]];
                        color_sq += diff * diff;
                    }
                    let wgt = (-((dy * dy + dx * dx) as f64) * inv_2ss - color_sq * inv_2rs).exp();
                    weight_sum += wgt;
                    for ch in 0..c {
                        acc[ch] += wgt * arr[[yy, xx, ch]];
                    }
                }
            }
            for ch in 0..c {
                out[[y, x, ch]] = acc[ch] / weight_sum;
            }
        }
    }
    out
}

/// Soft-threshold the high-frequency residual: the image is split into a
/// blurred base and a residual, and residual entries below the threshold
/// amplitude are removed while stronger structure is kept.
fn suppress_residual(arr: &Array3<f64>, threshold: f64) -> Array3<f64> {
    let base = gaussian_filter_raw(arr, 3, 0.8);
    let mut out = base.clone();
    for ((idx, b), &a) in out.indexed_iter_mut().zip(arr.iter()) {
        let _ = idx;
        let r = a - *b;
        *b += r.signum() * (r.abs() - threshold).max(0.0);
    }
    out
}

/// Filter-based cleaner: alternates bilateral-style smoothing with
/// high-frequency residual suppression for `iterations` rounds.
pub fn filter_clean(image: &ImageGrid, iterations: usize) -> Result<ImageGrid> {
    if iterations == 0 {
        return Err(Error::validation("filter_clean iterations must be >= 1"));
    }
    let mut arr = image.pixels().clone();
    for _ in 0..iterations {
        arr = bilateral_pass(&arr, 2, 1.5, 0.1);
        arr = suppress_residual(&arr, 4.0 / 255.0);
    }
    ImageGrid::from_clamped(arr)
}

/// Dispatch a [`DefenseSpec`] onto an image.
pub fn apply_defense(image: &ImageGrid, spec: &DefenseSpec) -> Result<ImageGrid> {
    match spec {
        DefenseSpec::Identity => Ok(image.clone()),
        DefenseSpec::GaussianBlur { kernel_size, sigma } => {
            gaussian_blur(image, *kernel_size, *sigma)
        }
        DefenseSpec::Jpeg { quality } => jpeg_compress(image, *quality),
        DefenseSpec::FilterClean { iterations } => filter_clean(image, *iterations),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use ndarray::Array3;

    /// 3x3 Laplacian high-pass l1 norm, the oracle for "removes noise".
    fn highpass_l1(image: &ImageGrid) -> f64 {
        let arr = image.pixels();
        let (h, w, c) = arr.dim();
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let center = arr[[y, x, ch]];
                    let mut acc = -4.0 * center;
                    for (dy, dx) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                        let yy = reflect_index(y as isize + dy, h);
                        let xx = reflect_index(x as isize + dx, w);
                        acc += arr[[yy, xx, ch]];
                    }
                    total += acc.abs();
                }
            }
        }
        total
    }

    fn noisy_image(seed: u64) -> ImageGrid {
        let mut arr = Array3::from_elem((16, 16, 3), 0.5);
        let mut state = seed;
        for v in arr.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let noise = ((state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 0.12;
            *v = (*v + noise).clamp(0.0, 1.0);
        }
        ImageGrid::new(arr).unwrap()
    }

    #[test]
    fn blur_leaves_constant_unchanged() {
        let img = ImageGrid::constant(8, 8, 3, 0.3).unwrap();
        let out = gaussian_blur(&img, 3, 0.8).unwrap();
        assert!(img.linf_distance(&out).unwrap() < 1e-12);
    }

    #[test]
    fn blur_spreads_single_pixel_and_preserves_mass() {
        let mut arr = Array3::zeros((9, 9, 1));
        arr[[4, 4, 0]] = 1.0;
        let img = ImageGrid::new(arr).unwrap();
        let out = gaussian_blur(&img, 3, 0.8).unwrap();
        // Mass confined to the 3x3 neighborhood, away from boundaries.
        let mut mass = 0.0;
        for y in 0..9 {
            for x in 0..9 {
                let v = out.pixels()[[y, x, 0]];
                if (3..=5).contains(&y) && (3..=5).contains(&x) {
                    mass += v;
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_is_not_idempotent() {
        let img = noisy_image(3);
        let once = gaussian_blur(&img, 3, 0.8).unwrap();
        let twice = gaussian_blur(&once, 3, 0.8).unwrap();
        assert!(once.linf_distance(&twice).unwrap() > 1e-6);
    }

    #[test]
    fn blur_rejects_even_kernel() {
        let img = ImageGrid::constant(8, 8, 3, 0.3).unwrap();
        assert!(gaussian_blur(&img, 4, 0.8).is_err());
    }

    #[test]
    fn blur_is_linear() {
        let a = noisy_image(1);
        let b = noisy_image(2);
        let (wa, wb) = (0.3, 0.7);
        let mixed = ImageGrid::new(wa * a.pixels() + wb * b.pixels()).unwrap();
        let lhs = gaussian_blur(&mixed, 3, 0.8).unwrap();
        let rhs = wa * gaussian_blur(&a, 3, 0.8).unwrap().pixels()
            + wb * gaussian_blur(&b, 3, 0.8).unwrap().pixels();
        let max_diff = lhs
            .pixels()
            .iter()
            .zip(rhs.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-6);
    }

    #[test]
    fn jpeg_preserves_shape_and_quality_orders_psnr() {
        let img = noisy_image(7);
        let hi = jpeg_compress(&img, 95).unwrap();
        let lo = jpeg_compress(&img, 10).unwrap();
        assert_eq!(hi.dim(), img.dim());
        assert_eq!(lo.dim(), img.dim());
        assert!(psnr(&img, &hi).unwrap() > psnr(&img, &lo).unwrap());
    }

    #[test]
    fn jpeg_constant_image_stays_close() {
        // Regression floor measured once on constant inputs.
        let img = ImageGrid::constant(16, 16, 3, 0.5).unwrap();
        for quality in [10, 50, 95] {
            let out = jpeg_compress(&img, quality).unwrap();
            assert!(psnr(&img, &out).unwrap() >= 40.0);
        }
    }

    #[test]
    fn jpeg_rejects_invalid_quality() {
        let img = ImageGrid::constant(8, 8, 3, 0.5).unwrap();
        assert!(jpeg_compress(&img, 0).is_err());
        assert!(jpeg_compress(&img, 101).is_err());
    }

    #[test]
    fn jpeg_handles_grayscale() {
        let img = ImageGrid::constant(8, 8, 1, 0.5).unwrap();
        let out = jpeg_compress(&img, 90).unwrap();
        assert_eq!(out.dim(), (8, 8, 1));
    }

    #[test]
    fn filter_clean_leaves_constant_unchanged() {
        let img = ImageGrid::constant(12, 12, 3, 0.6).unwrap();
        let out = filter_clean(&img, 4).unwrap();
        assert!(img.linf_distance(&out).unwrap() < 1e-9);
    }

    #[test]
    fn filter_clean_reduces_high_frequency_energy() {
        let img = noisy_image(11);
        let out = filter_clean(&img, 4).unwrap();
        assert!(highpass_l1(&out) < highpass_l1(&img));
    }

    #[test]
    fn jpeg_reduces_high_frequency_energy_on_noise() {
        let img = noisy_image(13);
        let out = jpeg_compress(&img, 50).unwrap();
        assert!(highpass_l1(&out) < highpass_l1(&img));
    }

    #[test]
    fn apply_defense_dispatches() {
        let img = noisy_image(5);
        assert_eq!(
            apply_defense(&img, &DefenseSpec::Identity).unwrap(),
            img
        );
        let via_spec = apply_defense(
            &img,
            &DefenseSpec::GaussianBlur { kernel_size: 3, sigma: 0.8 },
        )
        .unwrap();
        assert_eq!(via_spec, gaussian_blur(&img, 3, 0.8).unwrap());
        let bad: std::result::Result<DefenseSpec, _> =
            serde_json::from_str(r#"{"kind": "unknown_defense"}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn defense_spec_round_trips_through_json() {
        let specs = vec![
            DefenseSpec::Identity,
            DefenseSpec::GaussianBlur { kernel_size: 3, sigma: 0.8 },
            DefenseSpec::Jpeg { quality: 75 },
            DefenseSpec::FilterClean { iterations: 4 },
        ];
        let text = serde_json::to_string(&specs).unwrap();
        let back: Vec<DefenseSpec> = serde_json::from_str(&text).unwrap();
        assert_eq!(specs, back);
    }
}
