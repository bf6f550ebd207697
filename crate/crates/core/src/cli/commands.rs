use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::haze::{gen_depth, synthesize, transmission};
use crate::image::{crop_top_left, read_ppm, reflect_pad_to_multiple, write_ppm};
use crate::metrics::{psnr, ssim, DEFAULT_PSNR_CAP_DB};
use crate::nn::{build_gman, load_checkpoint, save_checkpoint, Network, NetworkConfig};
use crate::tensor::Tensor;
use crate::train::{fit, split_dataset, write_loss_log, DatasetIndex, ManifestRow, MANIFEST_HEADER};

use super::config::RunConfig;

pub const METRICS_HEADER: &str = "image,psnr,ssim";

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Usage(format!("missing --{what}")))
}

/// `.ppm` files directly inside `dir`, sorted by file name.
pub fn list_ppm(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_ppm = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
        if is_ppm && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// A single file, or every PPM in a directory.
fn input_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let files = list_ppm(input)?;
    if files.is_empty() {
        return Err(Error::argument(format!("no .ppm images in {}", input.display())));
    }
    Ok(files)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Writes `clear/`, `hazy/` and `manifest.csv` under the output directory:
/// one hazy image per clear image and grid point. Returns the manifest rows.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<ManifestRow>> {
    let input = required(&cfg.input, "input")?;
    let output = required(&cfg.output, "output")?;
    let sources = list_ppm(input)?;
    let points = cfg.grid.points()?;
    let (clear_dir, hazy_dir) = (output.join("clear"), output.join("hazy"));
    create_dir(&clear_dir)?;
    create_dir(&hazy_dir)?;
    let mut rows = Vec::new();
    let mut used = 0;
    for source in &sources {
        let clear = match read_ppm(source) {
            Ok(image) => image.pixels,
            Err(e) => {
                log::warn!("skipping unreadable image: {e}");
                continue;
            }
        };
        used += 1;
        let name = file_name(source);
        write_ppm(&clear, clear_dir.join(&name))?;
        let s = clear.shape();
        let depth = gen_depth(cfg.depth, s.h(), s.w())?;
        for p in &points {
            let t = transmission(&depth, p.beta())?;
            let hazy = synthesize(&clear, &t, p)?;
            let hazy_name = format!("{}_a{}_b{}.ppm", file_stem(source), p.atmosphere(), p.beta());
            write_ppm(&hazy, hazy_dir.join(&hazy_name))?;
            rows.push(ManifestRow {
                clear: format!("clear/{name}"),
                hazy: format!("hazy/{hazy_name}"),
                atmosphere: p.atmosphere(),
                beta: p.beta(),
                depth_kind: cfg.depth.to_string(),
            });
        }
    }
    if used == 0 {
        return Err(Error::argument(format!("no readable .ppm images in {}", input.display())));
    }
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for row in &rows {
        manifest.push_str(&row.to_csv());
        manifest.push('\n');
    }
    write_text(&output.join("manifest.csv"), &manifest)?;
    log::info!("synthesized {} hazy images from {used} clear images", rows.len());
    Ok(rows)
}

/// Splits the manifest, trains on the training side and writes
/// `model.ckpt` (or `--checkpoint`), `loss.csv` and `split.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Network> {
    let output = required(&cfg.output, "output")?;
    let manifest = cfg
        .manifest_path()
        .ok_or_else(|| Error::Usage("missing --manifest or --input".into()))?;
    let index = DatasetIndex::from_manifest(&manifest)?;
    let (train, test) = split_dataset(&index, cfg.test_fraction, cfg.seed)?;
    create_dir(output)?;
    let mut split = String::from("clear,split\n");
    for (part, name) in [(&train, "train"), (&test, "test")] {
        for e in &part.entries {
            let _ = writeln!(split, "{},{name}", file_name(&e.clear));
        }
    }
    write_text(&output.join("split.csv"), &split)?;
    log::info!("training on {} clear images ({} held out)", train.len(), test.len());

    let mut net = build_gman(&cfg.network, cfg.seed)?;
    let log = fit(&mut net, &train, &cfg.train)?;
    write_loss_log(output.join("loss.csv"), &log)?;
    let checkpoint = cfg.checkpoint.clone().unwrap_or_else(|| output.join("model.ckpt"));
    save_checkpoint(&net, &checkpoint)?;
    Ok(net)
}

/// Runs the network on an image of any size: reflect-pads to a multiple of
/// 4, dehazes, crops back and clamps to `[0, 1]`.
pub fn dehaze_image(net: &Network, image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    let padded = reflect_pad_to_multiple(image, NetworkConfig::INPUT_MULTIPLE)?;
    let out = net.forward(&padded)?;
    Ok(crop_top_left(&out, s.h(), s.w())?.map(|v| v.clamp(0.0, 1.0)))
}

/// Dehazes every input image into the output directory under the same name.
pub fn cmd_dehaze(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let input = required(&cfg.input, "input")?;
    let output = required(&cfg.output, "output")?;
    let net = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?)?;
    create_dir(output)?;
    let mut written = Vec::new();
    for path in input_images(input)? {
        let image = read_ppm(&path)?.pixels;
        let restored = dehaze_image(&net, &image).map_err(|e| e.in_file(&path))?;
        let target = output.join(file_name(&path));
        write_ppm(&restored, &target)?;
        written.push(target);
    }
    log::info!("dehazed {} images", written.len());
    Ok(written)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Pairs to compare: from a manifest (hazy image, or the file of the same
/// name in `--input`, against its clear source), or by file name between
/// `--input` and `--truth`.
fn eval_pairs(cfg: &RunConfig) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if let Some(manifest) = &cfg.manifest {
        let index = DatasetIndex::from_manifest(manifest)?;
        let mut pairs = Vec::new();
        for (clear, hazy) in index.pairs() {
            let name = file_name(hazy);
            let image = match &cfg.input {
                Some(dir) => dir.join(&name),
                None => hazy.to_path_buf(),
            };
            pairs.push((name, image, clear.to_path_buf()));
        }
        let missing: Vec<String> = pairs
            .iter()
            .filter(|(_, image, _)| !image.is_file())
            .map(|(name, _, _)| name.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::argument(format!("no restored image for: {}", missing.join(", "))));
        }
        return Ok(pairs);
    }
    let input = required(&cfg.input, "input")?;
    let truth = required(&cfg.truth, "truth")?;
    let by_name = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        Ok(list_ppm(dir)?.into_iter().map(|p| (file_name(&p), p)).collect())
    };
    let images = by_name(input)?;
    let truths = by_name(truth)?;
    let orphans: Vec<String> = images
        .keys()
        .filter(|k| !truths.contains_key(*k))
        .map(|k| format!("{k} (no ground truth)"))
        .chain(truths.keys().filter(|k| !images.contains_key(*k)).map(|k| format!("{k} (no image)")))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::argument(format!("unpaired files: {}", orphans.join(", "))));
    }
    if images.is_empty() {
        return Err(Error::argument(format!("no .ppm images in {}", input.display())));
    }
    Ok(images
        .into_iter()
        .map(|(name, image)| {
            let t = truths[&name].clone();
            (name, image, t)
        })
        .collect())
}

pub fn evaluate(cfg: &RunConfig) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for (name, image, truth) in eval_pairs(cfg)? {
        let a = read_ppm(&image)?.pixels;
        let b = read_ppm(&truth)?.pixels;
        let psnr = psnr(&a, &b, DEFAULT_PSNR_CAP_DB).map_err(|e| e.in_file(&image))?;
        let ssim = ssim(&a, &b).map_err(|e| e.in_file(&image))?;
        rows.push(MetricRow { image: name, psnr, ssim });
    }
    Ok(rows)
}

/// `image,psnr,ssim` rows followed by a `mean` row.
pub fn format_metrics(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.image, r.psnr, r.ssim);
    }
    let n = rows.len().max(1) as f64;
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
    let _ = writeln!(out, "mean,{mean_psnr},{mean_ssim}");
    out
}

/// Writes the metrics CSV to `--output`, or returns it for printing.
pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let csv = format_metrics(&evaluate(cfg)?);
    if let Some(path) = &cfg.output {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_text(path, &csv)?;
    }
    Ok(csv)
}
