//! Hazes a generated scene over the default (A, beta) grid, reports how
//! fidelity falls with scattering, then recovers the scene with the known
//! transmission.
//!
//! cargo run --example haze_synthesis [output_dir]

use std::path::PathBuf;

use gman::haze::{gen_depth, invert, synthesize, transmission, DepthKind, HazeGrid, DEFAULT_T_FLOOR};
use gman::image::write_ppm;
use gman::metrics::{psnr, ssim, DEFAULT_PSNR_CAP_DB};
use gman::tensor::{Shape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let (h, w) = (96, 128);
    let clear = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        0.5 + 0.4 * ((7.0 * u + c as f64).sin() * (5.0 * v - c as f64).cos())
    });
    let depth = gen_depth(DepthKind::LinearRamp, h, w)?;

    println!("{:>5} {:>5} {:>9} {:>7} {:>12}", "A", "beta", "psnr dB", "ssim", "inverse err");
    for p in HazeGrid::default().points()? {
        let t = transmission(&depth, p.beta())?;
        let hazy = synthesize(&clear, &t, &p)?;
        let back = invert(&hazy, &t, &p, DEFAULT_T_FLOOR)?;
        println!(
            "{:>5} {:>5} {:>9.2} {:>7.4} {:>12.1e}",
            p.atmosphere(),
            p.beta(),
            psnr(&hazy, &clear, DEFAULT_PSNR_CAP_DB)?,
            ssim(&hazy, &clear)?,
            back.max_abs_diff(&clear)?
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            write_ppm(&hazy, dir.join(format!("hazy_a{}_b{}.ppm", p.atmosphere(), p.beta())))?;
        }
    }
    if let Some(dir) = &out {
        write_ppm(&clear, dir.join("clear.ppm"))?;
        println!("images written to {}", dir.display());
    }
    Ok(())
}
