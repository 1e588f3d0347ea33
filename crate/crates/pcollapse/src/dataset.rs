//! Training corpora: a procedural synthetic-shapes generator and a loader
//! for directories of same-sized PNG files.

use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageGrid;

fn random_mid_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.4..0.6),
        rng.random_range(0.4..0.6),
        rng.random_range(0.4..0.6),
    ]
}

/// One procedurally drawn image: a muted gradient background, one to three
/// low-contrast circles or rectangles, and a patchwork of low-amplitude
/// square-wave textures. Most of the corpus variability lives in small
/// pixel amplitudes, so the trained encoder has to be genuinely sensitive
/// to perturbation-scale structure.
fn draw_shapes_image(height: usize, width: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    let top = random_mid_color(rng);
    let bottom = random_mid_color(rng);
    let vertical: bool = rng.random_bool(0.5);
    let mut arr = Array3::zeros((height, width, 3));
    for y in 0..height {
        for x in 0..width {
            let t = if vertical {
                y as f64 / (height - 1).max(1) as f64
            } else {
                x as f64 / (width - 1).max(1) as f64
            };
            for c in 0..3 {
                arr[[y, x, c]] = top[c] * (1.0 - t) + bottom[c] * t;
            }
        }
    }

    let shape_count = rng.random_range(1..=3);
    for _ in 0..shape_count {
        // Shape color sits near the background band, so edges stay soft.
        let offset: f64 =
            rng.random_range(0.05..0.12) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let base = random_mid_color(rng);
        let color = [base[0] + offset, base[1] + offset, base[2] + offset];
        let outline: bool = rng.random_bool(0.35);
        if rng.random_bool(0.5) {
            let cy = rng.random_range(0.0..height as f64);
            let cx = rng.random_range(0.0..width as f64);
            let radius = rng.random_range(height as f64 * 0.1..height as f64 * 0.35);
            for y in 0..height {
                for x in 0..width {
                    let dy = y as f64 + 0.5 - cy;
                    let dx = x as f64 + 0.5 - cx;
                    let dist = (dy * dy + dx * dx).sqrt();
                    let hit = if outline { (dist - radius).abs() <= 1.0 } else { dist <= radius };
                    if hit {
                        for c in 0..3 {
                            arr[[y, x, c]] = color[c];
                        }
                    }
                }
            }
        } else {
            let y0 = rng.random_range(0..height);
            let x0 = rng.random_range(0..width);
            let rh = rng.random_range(height / 6..height / 2 + 1);
            let rw = rng.random_range(width / 6..width / 2 + 1);
            let (y1, x1) = ((y0 + rh).min(height), (x0 + rw).min(width));
            for y in y0..y1 {
                for x in x0..x1 {
                    let on_border = y < y0 + 1 || y + 1 >= y1 || x < x0 + 1 || x + 1 >= x1;
                    if !outline || on_border {
                        for c in 0..3 {
                            arr[[y, x, c]] = color[c];
                        }
                    }
                }
            }
        }
    }

    // Texture field: per 8x8 block, an axis-aligned square wave of pitch 4
    // (2px on / 2px off), random polarity and amplitude.
    let block = 8;
    for by in (0..height).step_by(block) {
        for bx in (0..width).step_by(block) {
            let amplitude = rng.random_range(0.03..0.065);
            let horizontal: bool = rng.random_bool(0.5);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            for y in by..(by + block).min(height) {
                for x in bx..(bx + block).min(width) {
                    let k = if horizontal { y } else { x };
                    let wave = if (k / 2) % 2 == 0 { amplitude } else { -amplitude };
                    for c in 0..3 {
                        arr[[y, x, c]] += sign * wave;
                    }
                }
            }
        }
    }

    for v in arr.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    ImageGrid::new(arr).expect("generated pixels are in range")
}

/// Deterministic corpus of `count` RGB images at `height`x`width`.
pub fn synthetic_shapes_corpus(
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<ImageGrid>> {
    if count == 0 {
        return Err(Error::validation("corpus size must be >= 1"));
    }
    if height < 8 || width < 8 {
        return Err(Error::validation("corpus images must be at least 8x8"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| draw_shapes_image(height, width, &mut rng)).collect())
}

/// Write a corpus into `dir` as zero-padded `img_#####.png` files.
pub fn save_corpus(images: &[ImageGrid], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, img) in images.iter().enumerate() {
        img.save_png(&dir.join(format!("img_{i:05}.png")))?;
    }
    Ok(())
}

/// Load every `.png` in a directory, sorted by file name, and require one
/// common shape.
pub fn load_png_dir(dir: &Path) -> Result<Vec<(String, ImageGrid)>> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(Error::validation(format!("no .png files in {}", dir.display())));
    }
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    let mut shape = None;
    for name in names {
        let img = ImageGrid::load_png(&dir.join(&name))?;
        match shape {
            None => shape = Some(img.dim()),
            Some(s) if s != img.dim() => {
                return Err(Error::validation(format!(
                    "image {name} has shape {:?}, expected {s:?}",
                    img.dim()
                )))
            }
            _ => {}
        }
        out.push((name, img));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_sized() {
        let a = synthetic_shapes_corpus(5, 16, 16, 9).unwrap();
        let b = synthetic_shapes_corpus(5, 16, 16, 9).unwrap();
        assert_eq!(a.len(), 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
            assert_eq!(x.dim(), (16, 16, 3));
        }
        let c = synthetic_shapes_corpus(5, 16, 16, 10).unwrap();
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synthetic_shapes_corpus(3, 16, 16, 1).unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_png_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[0].0, "img_00000.png");
        for ((_, loaded), original) in loaded.iter().zip(&corpus) {
            assert_eq!(loaded, &original.quantized());
        }
    }

    #[test]
    fn ragged_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synthetic_shapes_corpus(2, 16, 16, 2).unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        ImageGrid::constant(8, 8, 3, 0.5)
            .unwrap()
            .save_png(&dir.path().join("odd.png"))
            .unwrap();
        assert!(load_png_dir(dir.path()).is_err());
    }

    #[test]
    fn empty_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_png_dir(dir.path()).is_err());
    }
}
