//! wasm-bindgen wrappers around a few `waveletgan` operations for the static
//! page in `www/`.
//!
//! Each export has a plain Rust twin returning `Result<_, String>` so the
//! logic is testable natively.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wasm_bindgen::prelude::*;

use waveletgan::fid::{frechet_distance, GaussianStats};
use waveletgan::nn::{Mode, Module};
use waveletgan::wavelet::{sample_kernel, MotherWavelet};
use waveletgan::wavelet_deconv::WaveletDeconvLayer;
use waveletgan::Tensor;

fn text(e: waveletgan::Error) -> String {
    e.to_string()
}

/// Taps of the Mexican-hat kernel at `scale`, centred on the middle tap.
pub fn wavelet_kernel(scale: f64, width: usize, sigma: f64) -> Result<Vec<f64>, String> {
    sample_kernel(scale, width, sigma).map_err(text)
}

/// Seeded standard-normal noise, `height * width` values in raster order.
pub fn gaussian_noise(height: usize, width: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..height * width).map(|_| rng.sample(StandardNormal)).collect()
}

/// Filters a single-channel `height x width` image with one wavelet per scale
/// along its raster order and averages the responses.
pub fn homogenize(
    image: &[f64],
    height: usize,
    width: usize,
    scales: &[f64],
    kernel_width: usize,
) -> Result<Vec<f64>, String> {
    let mut layer = WaveletDeconvLayer::new("demo", MotherWavelet::new(1.0).map_err(text)?, scales, kernel_width)
        .map_err(text)?;
    let x = Tensor::from_vec(&[1, height, width, 1], image.to_vec()).map_err(text)?;
    Ok(layer.forward(x, Mode::Eval).map_err(text)?.into_data())
}

/// Fréchet distance between two Gaussians with diagonal covariances.
pub fn frechet_diagonal(mu_a: &[f64], var_a: &[f64], mu_b: &[f64], var_b: &[f64]) -> Result<f64, String> {
    let d = mu_a.len();
    if [var_a.len(), mu_b.len(), var_b.len()].iter().any(|&n| n != d) || d == 0 {
        return Err(format!(
            "means and variances must have one common, nonzero length; got {}, {}, {}, {}",
            d,
            var_a.len(),
            mu_b.len(),
            var_b.len()
        ));
    }
    let stats = |mu: &[f64], var: &[f64]| GaussianStats {
        mu: DVector::from_column_slice(mu),
        cov: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
    };
    frechet_distance(&stats(mu_a, var_a), &stats(mu_b, var_b)).map_err(text)
}

#[wasm_bindgen(js_name = waveletKernel)]
pub fn js_wavelet_kernel(scale: f64, width: usize, sigma: f64) -> Result<Vec<f64>, JsError> {
    wavelet_kernel(scale, width, sigma).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = gaussianNoise)]
pub fn js_gaussian_noise(height: usize, width: usize, seed: u32) -> Vec<f64> {
    gaussian_noise(height, width, u64::from(seed))
}

#[wasm_bindgen(js_name = homogenize)]
pub fn js_homogenize(
    image: &[f64],
    height: usize,
    width: usize,
    scales: &[f64],
    kernel_width: usize,
) -> Result<Vec<f64>, JsError> {
    homogenize(image, height, width, scales, kernel_width).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = frechetDiagonal)]
pub fn js_frechet_diagonal(mu_a: &[f64], var_a: &[f64], mu_b: &[f64], var_b: &[f64]) -> Result<f64, JsError> {
    frechet_diagonal(mu_a, var_a, mu_b, var_b).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_symmetric() {
        let k = wavelet_kernel(2.0, 11, 1.0).unwrap();
        assert_eq!(k.len(), 11);
        for j in 0..11 {
            assert_eq!(k[j], k[10 - j]);
        }
        assert!(wavelet_kernel(1.0, 4, 1.0).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        assert_eq!(gaussian_noise(4, 5, 9), gaussian_noise(4, 5, 9));
        assert_ne!(gaussian_noise(4, 5, 9), gaussian_noise(4, 5, 10));
        assert_eq!(gaussian_noise(3, 7, 0).len(), 21);
    }

    #[test]
    fn homogenize_keeps_size_and_is_linear() {
        let x = gaussian_noise(8, 8, 1);
        let y = homogenize(&x, 8, 8, &[1.0, 2.0, 4.0], 9).unwrap();
        assert_eq!(y.len(), 64);
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let y2 = homogenize(&doubled, 8, 8, &[1.0, 2.0, 4.0], 9).unwrap();
        for (a, b) in y.iter().zip(&y2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        assert!(homogenize(&x, 8, 7, &[1.0], 9).is_err());
        assert!(homogenize(&x, 8, 8, &[], 9).is_err());
    }

    #[test]
    fn frechet_diagonal_closed_form() {
        let d = frechet_diagonal(&[0.0, 1.0], &[1.0, 4.0], &[1.0, 1.0], &[4.0, 1.0]).unwrap();
        // 1 + (1 + 4 - 4) + (4 + 1 - 4)
        assert!((d - 3.0).abs() < 1e-12);
        assert!(frechet_diagonal(&[0.0], &[1.0], &[0.0], &[1.0]).unwrap().abs() < 1e-12);
        assert!(frechet_diagonal(&[0.0], &[1.0, 2.0], &[0.0], &[1.0]).is_err());
    }
}
