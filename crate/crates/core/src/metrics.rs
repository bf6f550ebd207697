//! Image quality metrics for images with values in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("cannot compare {} with {}", a.shape(), b.shape())));
    }
    if a.numel() == 0 {
        return Err(Error::argument("cannot compare empty images"));
    }
    Ok(())
}

/// Mean of squared differences over every element (pixels and channels).
pub fn mean_squared_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(1 / mse)`, saturating at `cap_db` (which also covers `mse = 0`).
pub fn psnr(a: &Tensor, b: &Tensor, cap_db: f64) -> Result<f64> {
    let mse = mean_squared_error(a, b)?;
    if mse == 0.0 {
        return Ok(cap_db);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(cap_db))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let product = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let aa = filter_valid(&product(a, a), h, w, taps);
    let bb = filter_valid(&product(b, b), h, w, taps);
    let ab = filter_valid(&product(a, b), h, w, taps);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        // written so that swapping a and b, or a == b, is exact in floating point
        let num = (2.0 * (ma * mb) + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        sum += num / den;
    }
    sum / mu_a.len() as f64
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), evaluated at
/// every fully contained window position, per channel, then averaged over
/// all channels and samples.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    let s = a.shape();
    if s.rank() != 4 {
        return Err(Error::shape(format!("ssim expects n x c x h x w images, got {s}")));
    }
    if s.h() < SSIM_WINDOW || s.w() < SSIM_WINDOW {
        return Err(Error::argument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            s.h(),
            s.w()
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let plane = s.plane_len();
    let planes = a.data().chunks(plane).zip(b.data().chunks(plane));
    let total: f64 = planes.map(|(pa, pb)| ssim_plane(pa, pb, s.h(), s.w(), &taps)).sum();
    Ok(total / (s.n() * s.c()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use proptest::prelude::*;

    fn pattern(h: usize, w: usize, seed: usize) -> Tensor {
        Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
            ((c * 7 + y * 13 + x * 29 + seed * 31) % 17) as f64 / 16.0
        })
    }

    #[test]
    fn psnr_reference_values() {
        let a = Tensor::full(Shape::new(1, 3, 8, 8), 0.4);
        assert_eq!(psnr(&a, &a, DEFAULT_PSNR_CAP_DB).unwrap(), 100.0);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 100.0).unwrap() - 20.0).abs() < 1e-9);
        let c = a.map(|v| v + 0.05);
        let gain = psnr(&a, &c, 100.0).unwrap() - psnr(&a, &b, 100.0).unwrap();
        assert!((gain - 10.0 * 4f64.log10()).abs() < 1e-9);
        let tiny = a.map(|v| v + 1e-8);
        assert_eq!(psnr(&a, &tiny, 100.0).unwrap(), 100.0);
        assert!(psnr(&a, &Tensor::zeros(Shape::new(1, 3, 8, 4)), 100.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_error() {
        let a = pattern(12, 12, 0);
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let b = a.map(|v| v + 0.01 * k as f64);
            let p = psnr(&a, &b, 100.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(t[i], t[10 - i]);
        }
        assert!(t[5] > t[4]);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = pattern(16, 20, 1);
        let b = pattern(16, 20, 2);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b).unwrap().to_bits(), ssim(&b, &a).unwrap().to_bits());
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = Tensor::full(Shape::new(1, 3, 11, 11), 0.5);
        let b = Tensor::full(Shape::new(1, 3, 11, 11), 0.6);
        let expected = (2.0 * 0.5 * 0.6 + 1e-4) * (2.0 * 0.0 + 9e-4) / ((0.25 + 0.36 + 1e-4) * (0.0 + 0.0 + 9e-4));
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = pattern(10, 20, 0);
        assert!(matches!(ssim(&a, &a), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn ssim_is_bounded(
            a in prop::collection::vec(0.0f64..=1.0, 3 * 12 * 12),
            b in prop::collection::vec(0.0f64..=1.0, 3 * 12 * 12),
        ) {
            let a = Tensor::from_vec(Shape::new(1, 3, 12, 12), a).unwrap();
            let b = Tensor::from_vec(Shape::new(1, 3, 12, 12), b).unwrap();
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(s.to_bits(), ssim(&b, &a).unwrap().to_bits());
        }
    }
}
