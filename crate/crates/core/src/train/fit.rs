use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::read_ppm;
use crate::loss::{LossBreakdown, LossConfig, Objective};
use crate::nn::{save_checkpoint, Network, NetworkConfig};
use crate::tensor::{Tape, Tensor};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::data::{crop_at, random_corner, DatasetIndex};

pub const LOSS_LOG_HEADER: &str = "epoch,total,l_mse,l_p";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Side of the square training crops.
    pub crop: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 35,
            crop: 224,
            epochs: 20,
            seed: 0,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch size must be at least 1"));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(NetworkConfig::INPUT_MULTIPLE) {
            return Err(Error::argument(format!(
                "crop {} must be a positive multiple of {}",
                self.crop,
                NetworkConfig::INPUT_MULTIPLE
            )));
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::argument("checkpoint_every needs a checkpoint directory"));
        }
        self.loss.validate()?;
        self.adam.validate()
    }
}

/// Mean losses over the steps of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossBreakdown,
}

/// Forward, loss, backward and one Adam update on a single batch. Returns the
/// loss before the update; parameter gradients are cleared afterwards.
pub fn train_step(
    net: &mut Network,
    objective: &Objective,
    hazy: &Tensor,
    clear: &Tensor,
    adam: &mut AdamState,
) -> Result<LossBreakdown> {
    if hazy.shape() != clear.shape() {
        return Err(Error::shape(format!(
            "hazy batch {} does not match clear batch {}",
            hazy.shape(),
            clear.shape()
        )));
    }
    let mut tape = Tape::new();
    let params = net.bind(&mut tape);
    let features = objective.extractor().bind(&mut tape);
    let x = tape.constant(hazy.clone());
    let y = tape.constant(clear.clone());
    let out = net.forward_on(&mut tape, &params, &x)?;
    let terms = objective.terms_on(&mut tape, &features, &out, &y)?;
    let losses = terms.breakdown(&tape)?;
    tape.backward(&terms.total)?;
    for (slot, var) in net.params_mut().iter_mut().zip(&params) {
        let grad = tape
            .take_grad(var)?
            .unwrap_or_else(|| vec![0.0; slot.numel()]);
        slot.set_grad(grad)?;
    }
    let result = adam_step(net.params_mut(), adam);
    net.params_mut().iter_mut().for_each(Tensor::clear_grad);
    result.map(|()| losses)
}

/// Trains on in-memory `(hazy, clear)` pairs of `[1, 3, h, w]` images.
///
/// Each epoch shuffles the pairs, cuts them into batches and takes one
/// random crop per pair (the same window from both images). Shuffling and
/// crop positions come from a single generator seeded with `cfg.seed`.
pub fn fit_pairs(
    net: &mut Network,
    objective: &Objective,
    pairs: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
    adam: &mut AdamState,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::argument("no training pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut epoch_steps = 0;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|max| steps >= max) {
                break;
            }
            let mut hazy = Vec::with_capacity(batch.len());
            let mut clear = Vec::with_capacity(batch.len());
            for &i in batch {
                let (h, c) = &pairs[i];
                if h.shape() != c.shape() {
                    return Err(Error::shape(format!("pair {i}: hazy {} vs clear {}", h.shape(), c.shape())));
                }
                let (top, left) = random_corner(h.shape().h(), h.shape().w(), cfg.crop, &mut rng)?;
                hazy.push(crop_at(h, top, left, cfg.crop)?);
                clear.push(crop_at(c, top, left, cfg.crop)?);
            }
            let l = train_step(net, objective, &Tensor::stack(&hazy)?, &Tensor::stack(&clear)?, adam)?;
            log::debug!("step {}: total {:.6} mse {:.6} perceptual {:.6}", steps + 1, l.total, l.l_mse, l.l_p);
            sum.total += l.total;
            sum.l_mse += l.l_mse;
            sum.l_p += l.l_p;
            epoch_steps += 1;
            steps += 1;
        }
        if epoch_steps == 0 {
            break;
        }
        let k = epoch_steps as f64;
        let mean = LossBreakdown {
            l_mse: sum.l_mse / k,
            l_p: sum.l_p / k,
            total: sum.total / k,
        };
        log::info!("epoch {epoch}: total {:.6} mse {:.6} perceptual {:.6}", mean.total, mean.l_mse, mean.l_p);
        log.push(EpochLog {
            epoch,
            steps: epoch_steps,
            mean,
        });
        if let Some(dir) = cfg.checkpoint_dir.as_ref().filter(|_| cfg.checkpoint_every > 0) {
            if epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(net, dir.join(format!("epoch_{epoch:03}.ckpt")))?;
            }
        }
    }
    Ok(log)
}

/// Loads every (hazy, clear) pair of `index` and trains on them.
pub fn fit(net: &mut Network, index: &DatasetIndex, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if index.is_empty() {
        return Err(Error::argument("training index is empty"));
    }
    let objective = Objective::new(&cfg.loss)?;
    let mut pairs = Vec::new();
    for entry in &index.entries {
        let clear = read_ppm(&entry.clear)?.pixels;
        for path in &entry.hazy {
            pairs.push((read_ppm(path)?.pixels, clear.clone()));
        }
    }
    let mut adam = AdamState::new(net.params(), cfg.adam)?;
    fit_pairs(net, &objective, &pairs, cfg, &mut adam)
}

/// CSV with one row per epoch; floats use the shortest exact representation.
pub fn format_loss_log(log: &[EpochLog]) -> String {
    let mut out = String::from(LOSS_LOG_HEADER);
    out.push('\n');
    for e in log {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.mean.total, e.mean.l_mse, e.mean.l_p);
    }
    out
}

pub fn write_loss_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_loss_log(log)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_gman, FeatureExtractorConfig};
    use crate::tensor::Shape;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            crop: 8,
            epochs: 2,
            seed: 5,
            loss: LossConfig {
                lambda: 0.01,
                extractor: FeatureExtractorConfig::seeded(1).with_channels(vec![2, 3, 4]),
            },
            ..TrainConfig::default()
        }
    }

    fn pairs() -> Vec<(Tensor, Tensor)> {
        (0..3)
            .map(|k| {
                let clear = Tensor::from_fn(Shape::new(1, 3, 12, 12), |_, c, y, x| {
                    ((c + k + y * 2 + x) % 7) as f64 / 6.0
                });
                let hazy = clear.map(|v| 0.6 * v + 0.35);
                (hazy, clear)
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_loss_fixed() {
        let cfg = tiny_config();
        let objective = Objective::new(&cfg.loss).unwrap();
        let mut net = build_gman(&NetworkConfig::reduced(2, 4), 3).unwrap();
        let adam_cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let mut adam = AdamState::new(net.params(), adam_cfg).unwrap();
        let (h, c) = &pairs()[0];
        let (h, c) = (crop_at(h, 0, 0, 8).unwrap(), crop_at(c, 0, 0, 8).unwrap());
        let a = train_step(&mut net, &objective, &h, &c, &mut adam).unwrap();
        let b = train_step(&mut net, &objective, &h, &c, &mut adam).unwrap();
        assert_eq!(a, b);
        assert_eq!(adam.step_count(), 2);
        assert!(net.params().iter().all(|p| p.grad().is_none()));
    }

    #[test]
    fn trajectories_are_reproducible() {
        let cfg = tiny_config();
        let run = || {
            let objective = Objective::new(&cfg.loss).unwrap();
            let mut net = build_gman(&NetworkConfig::reduced(2, 4), 3).unwrap();
            let mut adam = AdamState::new(net.params(), cfg.adam).unwrap();
            let log = fit_pairs(&mut net, &objective, &pairs(), &cfg, &mut adam).unwrap();
            (format_loss_log(&log), net.params().to_vec())
        };
        let (log_a, params_a) = run();
        let (log_b, params_b) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(params_a, params_b);
        assert_eq!(log_a.lines().count(), 1 + cfg.epochs);
        assert!(log_a.starts_with("epoch,total,l_mse,l_p\n1,"));
    }

    #[test]
    fn max_steps_stops_mid_epoch() {
        let cfg = TrainConfig { max_steps: Some(3), epochs: 5, ..tiny_config() };
        let objective = Objective::new(&cfg.loss).unwrap();
        let mut net = build_gman(&NetworkConfig::reduced(2, 4), 3).unwrap();
        let mut adam = AdamState::new(net.params(), cfg.adam).unwrap();
        let log = fit_pairs(&mut net, &objective, &pairs(), &cfg, &mut adam).unwrap();
        assert_eq!(adam.step_count(), 3);
        assert_eq!(log.iter().map(|e| e.steps).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn checkpoints_are_written_on_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            checkpoint_every: 2,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..tiny_config()
        };
        let objective = Objective::new(&cfg.loss).unwrap();
        let mut net = build_gman(&NetworkConfig::reduced(2, 4), 3).unwrap();
        let mut adam = AdamState::new(net.params(), cfg.adam).unwrap();
        fit_pairs(&mut net, &objective, &pairs(), &cfg, &mut adam).unwrap();
        let mut names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["epoch_002.ckpt", "epoch_004.ckpt"]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { crop: 10, ..tiny_config() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..tiny_config() }.validate().is_err());
        assert!(TrainConfig { checkpoint_every: 1, ..tiny_config() }.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }
}
