//! Pixel-space image container.
//!
//! An [`ImageGrid`] is an H×W×C array of intensities in `[0, 1]`, the unit
//! both attacks and metrics operate on. Grayscale (C=1) and RGB (C=3) are
//! supported; files are exchanged as 8-bit PNG.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

/// An image as an `(H, W, C)` array of `f64` intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pixels: Array3<f64>,
}

impl ImageGrid {
    /// Wrap a raw array, validating the range and channel-count invariants.
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::validation("image must have nonzero height and width"));
        }
        if c != 1 && c != 3 {
            return Err(Error::validation(format!(
                "channel count must be 1 or 3, got {c}"
            )));
        }
        for &v in pixels.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!(
                    "pixel value {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self { pixels })
    }

    /// Constant-intensity image.
    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, channels), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    /// Borrow the underlying `(H, W, C)` array.
    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    /// Consume and return the underlying array.
    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    /// Build from an array that may fall outside `[0, 1]`, clamping entrywise.
    pub fn from_clamped(mut pixels: Array3<f64>) -> Result<Self> {
        for v in pixels.iter_mut() {
            if !v.is_finite() {
                return Err(Error::validation("non-finite pixel value"));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(pixels)
    }

    /// Quantize to 8-bit levels (the value each pixel takes once saved as PNG).
    pub fn quantized(&self) -> Self {
        let pixels = self.pixels.mapv(|v| (v * 255.0).round() / 255.0);
        Self { pixels }
    }

    /// Largest absolute per-pixel difference against another image.
    pub fn linf_distance(&self, other: &ImageGrid) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::validation("image shape mismatch"));
        }
        Ok(self
            .pixels
            .iter()
            .zip(other.pixels.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Encode as 8-bit PNG bytes.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let (h, w, c) = self.dim();
        let raw: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let mut out = Vec::new();
        let color = if c == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::write_buffer_with_format(
            &mut std::io::Cursor::new(&mut out),
            &raw,
            w as u32,
            h as u32,
            color,
            image::ImageFormat::Png,
        )?;
        Ok(out)
    }

    /// Save as 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Decode from PNG bytes; RGB and grayscale inputs keep their channel count.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let dyn_img = image::load_from_memory(bytes)?;
        Ok(Self::from_dynamic(dyn_img))
    }

    /// Load a PNG file.
    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_png_bytes(&bytes)
    }

    fn from_dynamic(img: image::DynamicImage) -> Self {
        use image::DynamicImage;
        let (grayscale, w, h) = match &img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) => {
                (true, img.width(), img.height())
            }
            _ => (false, img.width(), img.height()),
        };
        let (h, w) = (h as usize, w as usize);
        let pixels = if grayscale {
            let buf = img.into_luma8();
            let mut arr = Array3::zeros((h, w, 1));
            for (x, y, p) in buf.enumerate_pixels() {
                arr[[y as usize, x as usize, 0]] = f64::from(p.0[0]) / 255.0;
            }
            arr
        } else {
            let buf = img.into_rgb8();
            let mut arr = Array3::zeros((h, w, 3));
            for (x, y, p) in buf.enumerate_pixels() {
                for c in 0..3 {
                    arr[[y as usize, x as usize, c]] = f64::from(p.0[c]) / 255.0;
                }
            }
            arr
        };
        Self { pixels }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        let arr = Array3::from_elem((4, 4, 3), 1.2);
        assert!(ImageGrid::new(arr).is_err());
    }

    #[test]
    fn rejects_bad_channel_count() {
        let arr = Array3::from_elem((4, 4, 2), 0.5);
        assert!(ImageGrid::new(arr).is_err());
    }

    #[test]
    fn png_round_trip_preserves_quantized_pixels() {
        let mut arr = Array3::zeros((5, 7, 3));
        for (i, v) in arr.iter_mut().enumerate() {
            *v = (i % 256) as f64 / 255.0;
        }
        let img = ImageGrid::new(arr).unwrap();
        let bytes = img.to_png_bytes().unwrap();
        let back = ImageGrid::from_png_bytes(&bytes).unwrap();
        assert_eq!(back, img.quantized());
    }

    #[test]
    fn quantization_error_bounded_by_half_level() {
        let arr = Array3::from_elem((2, 2, 1), 0.123_456);
        let img = ImageGrid::new(arr).unwrap();
        let q = img.quantized();
        assert!(img.linf_distance(&q).unwrap() <= 0.5 / 255.0);
    }

    #[test]
    fn grayscale_png_round_trip_keeps_one_channel() {
        let img = ImageGrid::constant(4, 4, 1, 0.5).unwrap();
        let back = ImageGrid::from_png_bytes(&img.to_png_bytes().unwrap()).unwrap();
        assert_eq!(back.channels(), 1);
    }
}
