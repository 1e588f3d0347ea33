//! Separable Gaussian filtering with reflect padding.
//!
//! Shared by the blur defense, the windowed image metrics, and the attack's
//! in-loop transform. Reflection is half-sample symmetric (index -1 maps to
//! 0, index n to n-1), which together with a symmetric kernel makes the
//! filter self-adjoint: the same pass serves as its own gradient backward.

use ndarray::Array3;

/// Normalized 1-D Gaussian taps of odd length `size`.
pub(crate) fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    debug_assert!(size % 2 == 1 && size >= 1);
    debug_assert!(sigma > 0.0);
    let r = (size / 2) as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Fold an index into `[0, n)` by half-sample symmetric reflection.
pub(crate) fn reflect_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n > 0);
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Apply a 1-D kernel along rows then columns of every channel.
pub(crate) fn separable_filter_channels(arr: &Array3<f64>, kernel: &[f64]) -> Array3<f64> {
    let (h, w, c) = arr.dim();
    let r = (kernel.len() / 2) as isize;

    // Horizontal pass.
    let mut tmp = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &tap) in kernel.iter().enumerate() {
                    let xx = reflect_index(x as isize + k as isize - r, w);
                    acc += tap * arr[[y, xx, ch]];
                }
                tmp[[y, x, ch]] = acc;
            }
        }
    }

    // Vertical pass.
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &tap) in kernel.iter().enumerate() {
                    let yy = reflect_index(y as isize + k as isize - r, h);
                    acc += tap * tmp[[yy, x, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    out
}

/// Gaussian-filter every channel of a raw array. Linear; no range clamping.
pub(crate) fn gaussian_filter_raw(arr: &Array3<f64>, kernel_size: usize, sigma: f64) -> Array3<f64> {
    let kernel = gaussian_kernel_1d(kernel_size, sigma);
    separable_filter_channels(arr, &kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel_1d(11, 1.5);
        let sum: f64 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for i in 0..k.len() {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn reflect_folds_out_of_range_indices() {
        assert_eq!(reflect_index(-1, 4), 0);
        assert_eq!(reflect_index(-2, 4), 1);
        assert_eq!(reflect_index(4, 4), 3);
        assert_eq!(reflect_index(5, 4), 2);
        // Radius larger than the axis still folds into range.
        assert_eq!(reflect_index(-5, 3), 1);
        assert_eq!(reflect_index(9, 3), 2);
    }

    #[test]
    fn filter_is_self_adjoint() {
        // <G x, y> == <x, G y> for the symmetric kernel + reflect padding.
        let mut x = Array3::zeros((6, 5, 2));
        let mut y = Array3::zeros((6, 5, 2));
        for (i, v) in x.iter_mut().enumerate() {
            *v = ((i * 37 + 11) % 101) as f64 / 101.0;
        }
        for (i, v) in y.iter_mut().enumerate() {
            *v = ((i * 53 + 29) % 97) as f64 / 97.0;
        }
        let gx = gaussian_filter_raw(&x, 3, 0.8);
        let gy = gaussian_filter_raw(&y, 3, 0.8);
        let lhs: f64 = gx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_unchanged() {
        let arr = Array3::from_elem((8, 8, 3), 0.42);
        let out = gaussian_filter_raw(&arr, 3, 0.8);
        for &v in out.iter() {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }
}
