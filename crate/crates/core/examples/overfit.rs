//! Fits a narrow network to four hazy/clear pairs and reports the loss
//! curve and the PSNR gain on the training images.
//!
//! cargo run --example overfit [steps]

use gman::haze::{gen_depth, synthesize, transmission, DepthKind, HazeParams};
use gman::loss::{mse_loss, LossConfig, Objective};
use gman::metrics::psnr;
use gman::nn::{build_gman, FeatureExtractorConfig, NetworkConfig};
use gman::tensor::{Eager, Shape, Tensor};
use gman::train::{fit_pairs, AdamState, TrainConfig};

const SIDE: usize = 64;

fn scene(k: usize) -> Tensor {
    let f = 1.0 + k as f64;
    let side = (SIDE - 1) as f64;
    Tensor::from_fn(Shape::new(1, 3, SIDE, SIDE), |_, c, y, x| {
        let (u, v) = (x as f64 / side, y as f64 / side);
        let phase = c as f64 * 2.1 + k as f64;
        0.5 + 0.4 * ((3.0 * f * u + phase).sin() * (2.0 * f * v - phase).cos())
    })
}

fn main() -> gman::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let params = HazeParams::new(0.9, 0.3)?;
    let t = transmission(&gen_depth(DepthKind::Constant(1.0), SIDE, SIDE)?, params.beta())?;
    let pairs = (0..4)
        .map(|k| {
            let clear = scene(k);
            Ok((synthesize(&clear, &t, &params)?, clear))
        })
        .collect::<gman::Result<Vec<_>>>()?;

    let cfg = TrainConfig {
        batch_size: 4,
        crop: SIDE,
        epochs: steps,
        seed: 1,
        loss: LossConfig {
            lambda: 0.01,
            extractor: FeatureExtractorConfig::seeded(2).with_channels(vec![16, 32, 64]),
        },
        ..TrainConfig::default()
    };
    let objective = Objective::new(&cfg.loss)?;
    let mut net = build_gman(&NetworkConfig::reduced(16, 32), 1)?;
    let mut adam = AdamState::new(net.params(), cfg.adam)?;
    let log = fit_pairs(&mut net, &objective, &pairs, &cfg, &mut adam)?;
    for e in log.iter().filter(|e| e.epoch % 25 == 0 || e.epoch == log.len()) {
        println!("step {:>4}  total {:.5}  l_mse {:.5}  l_p {:.5}", e.epoch, e.mean.total, e.mean.l_mse, e.mean.l_p);
    }

    let hazy = Tensor::stack(&pairs.iter().map(|p| p.0.clone()).collect::<Vec<_>>())?;
    let clear = Tensor::stack(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>())?;
    let restored = net.forward(&hazy)?.map(|v| v.clamp(0.0, 1.0));
    println!("final l_mse on all pairs {:.2e}", mse_loss(&mut Eager, &restored, &clear)?.item()?);
    for i in 0..pairs.len() {
        let c = clear.sample(i)?;
        println!(
            "pair {i}: hazy {:.2} dB -> restored {:.2} dB",
            psnr(&hazy.sample(i)?, &c, 100.0)?,
            psnr(&restored.sample(i)?, &c, 100.0)?
        );
    }
    Ok(())
}
