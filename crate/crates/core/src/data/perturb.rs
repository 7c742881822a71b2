//! Out-of-distribution perturbations.

use ndarray::{Array1, Array3, Axis};
use rand::Rng;

use crate::metrics::Mask;
use crate::{Error, Result};

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn convolve_line(line: &[f32], k: &[f64]) -> Vec<f32> {
    let n = line.len();
    let r = (k.len() / 2) as isize;
    (0..n as isize)
        .map(|i| {
            k.iter()
                .enumerate()
                .map(|(j, &w)| w * line[reflect(i + j as isize - r, n)] as f64)
                .sum::<f64>() as f32
        })
        .collect()
}

/// Separable Gaussian blur with mirror padding and kernel radius ⌈3σ⌉.
/// `sigma = 0` returns the image unchanged.
pub fn gaussian_blur(image: &Array3<f32>, sigma: f64) -> Result<Array3<f32>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("blur sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let k = kernel(sigma);
    let mut out = image.clone();
    for mut plane in out.axis_iter_mut(Axis(0)) {
        for mut row in plane.axis_iter_mut(Axis(0)) {
            let v = convolve_line(&row.to_vec(), &k);
            row.assign(&Array1::from(v));
        }
        for mut col in plane.axis_iter_mut(Axis(1)) {
            let v = convolve_line(&col.to_vec(), &k);
            col.assign(&Array1::from(v));
        }
    }
    Ok(out)
}

/// Side of a square covering `ratio` of an `h × w` image.
pub fn patch_side(ratio: f64, h: usize, w: usize) -> usize {
    (ratio * (h * w) as f64).sqrt().round() as usize
}

/// Pastes a square patch covering `ratio` of the image area at a uniformly
/// random position fully inside the image. The fill is the image maximum
/// plus three standard deviations of its intensities.
pub fn random_patch<R: Rng + ?Sized>(image: &Array3<f32>, ratio: f64, rng: &mut R) -> Result<(Array3<f32>, Mask)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("patch ratio must be in (0, 1), got {ratio}")));
    }
    let (_, h, w) = image.dim();
    let side = patch_side(ratio, h, w).clamp(1, h.min(w));
    let top = rng.gen_range(0..=h - side);
    let left = rng.gen_range(0..=w - side);

    let n = image.len() as f64;
    let mean = image.iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (image.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max = image.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let fill = (max + 3.0 * std) as f32;

    let mut out = image.clone();
    out.slice_mut(ndarray::s![.., top..top + side, left..left + side]).fill(fill);
    let mut mask = Mask::from_elem((h, w), false);
    mask.slice_mut(ndarray::s![top..top + side, left..left + side]).fill(true);
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = Array3::from_shape_fn((1, 5, 5), |(_, r, c)| (r * c) as f32);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn constant_image_unchanged() {
        let img = Array3::from_elem((2, 6, 7), 0.25f32);
        let out = gaussian_blur(&img, 1.7).unwrap();
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn impulse_centre_matches_continuous_gaussian() {
        let mut img = Array3::<f32>::zeros((1, 15, 15));
        img[[0, 7, 7]] = 1.0;
        let out = gaussian_blur(&img, 1.0).unwrap();
        // 2-D density at the origin, renormalised by its mass on the
        // kernel support [-3.5, 3.5]², integrated with the midpoint rule
        let steps = 7000;
        let h = 7.0 / steps as f64;
        let mass_1d: f64 = (0..steps)
            .map(|i| {
                let x = -3.5 + (i as f64 + 0.5) * h;
                (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * h
            })
            .sum();
        let oracle = 1.0 / (2.0 * std::f64::consts::PI) / (mass_1d * mass_1d);
        assert!((out[[0, 7, 7]] as f64 - oracle).abs() < 1e-3);
        let total: f32 = out.iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn patch_geometry() {
        assert_eq!(patch_side(0.10, 224, 224), 71);
        let img = Array3::from_shape_fn((1, 224, 224), |(_, r, c)| ((r + c) % 7) as f32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, mask) = random_patch(&img, 0.10, &mut rng).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 71 * 71);
        let fill = out.iter().copied().fold(f32::MIN, f32::max);
        assert!(fill > 6.0);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let (_, mask2) = random_patch(&img, 0.10, &mut rng2).unwrap();
        assert_eq!(mask, mask2);
        assert!(random_patch(&img, 1.0, &mut rng).is_err());
        assert!(random_patch(&img, 0.0, &mut rng).is_err());
    }
}
