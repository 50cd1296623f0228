//! MSE, PSNR and SSIM.
//!
//! SSIM uses an 11x11 Gaussian window (σ = 1.5) at stride 1 over the valid
//! region, with `c1 = (0.01 · MAX)^2` and `c2 = (0.03 · MAX)^2`. Color images
//! score the mean of their per-channel SSIM.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::ImageF;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("images are empty")]
    Empty,
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall { width: usize, height: usize, window: usize },
}

fn shape(i: &ImageF) -> (usize, usize, usize) {
    (i.width(), i.height(), i.channels())
}

fn check(reference: &ImageF, test: &ImageF) -> Result<(), MetricError> {
    if !reference.same_shape(test) {
        return Err(MetricError::ShapeMismatch(shape(reference), shape(test)));
    }
    if reference.data().is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Mean squared difference over all pixels and channels.
pub fn mse(reference: &ImageF, test: &ImageF) -> Result<f64, MetricError> {
    check(reference, test)?;
    let sum: f64 = reference.data().iter().zip(test.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / reference.data().len() as f64)
}

/// `10 log10(MAX^2 / MSE)`; identical images give `+inf`.
pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(max_value * max_value / mse)
    }
}

pub fn psnr(reference: &ImageF, test: &ImageF, max_value: f64) -> Result<f64, MetricError> {
    Ok(psnr_from_mse(mse(reference, test)?, max_value))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-region Gaussian filter of a single-channel plane.
fn filter_valid(plane: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * height];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..ow {
            horiz[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, w)| w * horiz[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], width: usize, height: usize, max_value: f64) -> f64 {
    let k = gaussian_kernel();
    let c1 = (0.01 * max_value) * (0.01 * max_value);
    let c2 = (0.03 * max_value) * (0.03 * max_value);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, width, height, &k);
    let mu_b = filter_valid(b, width, height, &k);
    let aa = filter_valid(&prod(|x, _| x * x), width, height, &k);
    let bb = filter_valid(&prod(|_, y| y * y), width, height, &k);
    let ab = filter_valid(&prod(|x, y| x * y), width, height, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    total / mu_a.len() as f64
}

/// Mean SSIM over all window positions (and channels).
pub fn ssim(reference: &ImageF, test: &ImageF, max_value: f64) -> Result<f64, MetricError> {
    check(reference, test)?;
    let (w, h) = (reference.width(), reference.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall { width: w, height: h, window: SSIM_WINDOW });
    }
    let ch = reference.channels();
    let mut total = 0.0;
    for c in 0..ch {
        let a = reference.channel(c);
        let b = test.channel(c);
        total += ssim_plane(a.data(), b.data(), w, h, max_value);
    }
    Ok(total / ch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ImageF {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        ImageF::from_vec(w, h, 1, data).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = gray(8, 6, |x, y| ((x * 7 + y * 3) % 256) as f64);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.set(3, 2, 0, a.get(3, 2, 0) + 255.0);
        assert_eq!(mse(&a, &b).unwrap(), 255.0 * 255.0 / 48.0);
        let c = gray(8, 6, |x, y| a.get(x, y, 0) + 1.0);
        assert_eq!(mse(&a, &c).unwrap(), 1.0);
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr_from_mse(255.0 * 255.0, 255.0), 0.0);
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        let a = gray(4, 4, |x, _| x as f64);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_constant_images() {
        let x = gray(16, 16, |_, _| 0.0);
        let y = gray(16, 16, |_, _| 255.0);
        let c1 = (0.01f64 * 255.0).powi(2);
        let want = c1 / (255.0 * 255.0 + c1);
        let got = ssim(&x, &y, 255.0).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!((want - 1.0e-4).abs() < 1e-6);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = gray(20, 17, |x, y| ((x * 31 + y * 17) % 97) as f64 / 96.0);
        let b = gray(20, 17, |x, y| ((x * 13 + y * 29) % 89) as f64 / 88.0);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn errors() {
        let a = gray(8, 8, |_, _| 0.0);
        let b = gray(8, 7, |_, _| 0.0);
        assert!(matches!(mse(&a, &b), Err(MetricError::ShapeMismatch(..))));
        assert!(matches!(ssim(&a, &a, 1.0), Err(MetricError::TooSmall { .. })));
    }
}
