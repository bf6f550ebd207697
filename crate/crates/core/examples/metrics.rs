//! PSNR and SSIM under increasing noise, plus the fixed points both metrics
//! are pinned to.
//!
//! cargo run --example metrics

use gman::metrics::{mean_squared_error, psnr, ssim, DEFAULT_PSNR_CAP_DB};
use gman::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gman::Result<()> {
    let reference = Tensor::from_fn(Shape::new(1, 3, 48, 48), |_, c, y, x| {
        0.2 + 0.6 * (((x / 6 + y / 6 + c) % 4) as f64 / 3.0)
    });
    println!("identical images: psnr {} dB (cap), ssim {}", psnr(&reference, &reference, DEFAULT_PSNR_CAP_DB)?, ssim(&reference, &reference)?);
    let shifted = reference.map(|v| v + 0.1);
    println!("uniform +0.1:     psnr {:.4} dB", psnr(&reference, &shifted, DEFAULT_PSNR_CAP_DB)?);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("\n{:>7} {:>10} {:>9} {:>7}", "noise", "mse", "psnr dB", "ssim");
    for amplitude in [0.01, 0.02, 0.05, 0.1, 0.2, 0.4] {
        let noisy = Tensor::from_fn(reference.shape(), |n, c, y, x| {
            (reference.get(n, c, y, x) + rng.random_range(-amplitude..amplitude)).clamp(0.0, 1.0)
        });
        println!(
            "{amplitude:>7} {:>10.2e} {:>9.2} {:>7.4}",
            mean_squared_error(&reference, &noisy)?,
            psnr(&reference, &noisy, DEFAULT_PSNR_CAP_DB)?,
            ssim(&reference, &noisy)?
        );
    }
    Ok(())
}
