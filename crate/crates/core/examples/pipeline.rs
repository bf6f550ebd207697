//! The full command-line workflow in one process: synthesize a dataset,
//! train briefly, dehaze the hazy images and score them.
//!
//! cargo run --example pipeline [work_dir]

use std::path::PathBuf;

use gman::cli;
use gman::image::write_ppm;
use gman::tensor::{Shape, Tensor};

fn gman(args: &[&str]) -> Result<(), String> {
    let code = cli::run(std::iter::once("gman").chain(args.iter().copied()));
    if code != cli::EXIT_OK {
        return Err(format!("gman {} exited with {code}", args[0]));
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let work = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("gman-pipeline"));
    let scenes = work.join("scenes");
    std::fs::create_dir_all(&scenes)?;
    for k in 0..4 {
        let image = Tensor::from_fn(Shape::new(1, 3, 40, 48), |_, c, y, x| {
            0.15 + 0.7 * (((x * (k + 2) + y * 3 + c * 5) % 24) as f64 / 23.0)
        });
        write_ppm(&image, scenes.join(format!("scene{k}.ppm")))?;
    }
    let config = work.join("small.cfg");
    std::fs::write(&config, "base_channels = 8\ndown_channels = 16\nextractor_channels = 4,8,8\ncrop = 32\nbatch = 4\nepochs = 50\nsteps = 40\ntest_fraction = 0.25\n")
        ?;

    let p = |name: &str| work.join(name).display().to_string();
    let cfg = config.display().to_string();
    gman(&["synth", "--input", &p("scenes"), "--output", &p("data"), "--grid-a", "0.9", "--grid-beta", "0.5,1.0"])?;
    gman(&["train", "--config", &cfg, "--input", &p("data"), "--output", &p("run"), "--seed", "3"])?;
    gman(&["dehaze", "--input", &p("data/hazy"), "--output", &p("restored"), "--checkpoint", &p("run/model.ckpt")])?;
    gman(&["eval", "--manifest", &p("data/manifest.csv"), "--output", &p("hazy_metrics.csv")])?;
    gman(&["eval", "--manifest", &p("data/manifest.csv"), "--input", &p("restored"), "--output", &p("metrics.csv")])?;

    for name in ["run/loss.csv", "hazy_metrics.csv", "metrics.csv"] {
        let path = work.join(name);
        let text = std::fs::read_to_string(&path)?;
        println!("== {name}\n{}", text.lines().rev().take(3).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n"));
    }
    println!("outputs in {}", work.display());
    Ok(())
}
