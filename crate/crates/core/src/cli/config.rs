use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::haze::{DepthKind, HazeGrid};
use crate::nn::{ExtractorSource, NetworkConfig};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Dehaze,
    Eval,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Dehaze => "dehaze",
            Command::Eval => "eval",
        })
    }
}

/// Every setting a command can use. Built from defaults, then a config file,
/// then command-line flags, each layer overriding the previous one.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Ground-truth directory for `eval`.
    pub truth: Option<PathBuf>,
    /// Synthesis manifest for `train` and `eval`.
    pub manifest: Option<PathBuf>,
    pub grid: HazeGrid,
    pub depth: DepthKind,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub test_fraction: f64,
    extractor_seed: Option<u64>,
}

/// Keys accepted in config files; flags use the same names with `-` for `_`.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "input",
    "output",
    "checkpoint",
    "truth",
    "manifest",
    "grid_a",
    "grid_beta",
    "depth",
    "base_channels",
    "down_channels",
    "residual_convs",
    "epochs",
    "batch",
    "crop",
    "steps",
    "lambda",
    "lr",
    "checkpoint_every",
    "test_fraction",
    "extractor_channels",
    "extractor_seed",
    "extractor_file",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(|v| parse(key, v))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::Usage(format!("{key} needs at least one value")));
    }
    Ok(items)
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            seed: 0,
            input: None,
            output: None,
            checkpoint: None,
            truth: None,
            manifest: None,
            grid: HazeGrid::default(),
            depth: DepthKind::LinearRamp,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            test_fraction: 0.1,
            extractor_seed: None,
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || PathBuf::from(value);
        match key {
            "seed" => self.seed = parse(key, value)?,
            "input" => self.input = Some(path()),
            "output" => self.output = Some(path()),
            "checkpoint" => self.checkpoint = Some(path()),
            "truth" => self.truth = Some(path()),
            "manifest" => self.manifest = Some(path()),
            "grid_a" => self.grid.atmosphere = parse_list(key, value)?,
            "grid_beta" => self.grid.beta = parse_list(key, value)?,
            "depth" => self.depth = value.parse()?,
            "base_channels" => self.network.base_channels = parse(key, value)?,
            "down_channels" => self.network.down_channels = parse(key, value)?,
            "residual_convs" => self.network.residual_conv_counts = parse_list(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch" => self.train.batch_size = parse(key, value)?,
            "crop" => self.train.crop = parse(key, value)?,
            "steps" => self.train.max_steps = Some(parse(key, value)?),
            "lambda" => self.train.loss.lambda = parse(key, value)?,
            "lr" => self.train.adam.lr = parse(key, value)?,
            "checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "extractor_channels" => self.train.loss.extractor.tap_channels = parse_list(key, value)?,
            "extractor_seed" => self.extractor_seed = Some(parse(key, value)?),
            "extractor_file" => self.train.loss.extractor.source = ExtractorSource::File(path()),
            _ => return Err(Error::Usage(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Usage(format!("line {}: {}", n + 1, e.root())))?;
        }
        Ok(())
    }

    /// Resolves derived settings and checks everything the command needs.
    pub fn finish(mut self) -> Result<Self> {
        if !matches!(self.train.loss.extractor.source, ExtractorSource::File(_)) {
            self.train.loss.extractor.source = ExtractorSource::Seeded(self.extractor_seed.unwrap_or(self.seed));
        }
        self.train.seed = self.seed;
        if self.train.checkpoint_every > 0 {
            self.train.checkpoint_dir = self.output.clone();
        }
        let need = |p: &Option<PathBuf>, what: &str| -> Result<()> {
            match p {
                Some(_) => Ok(()),
                None => Err(Error::Usage(format!("{} needs --{what}", self.command))),
            }
        };
        match self.command {
            Command::Synth => {
                need(&self.input, "input")?;
                need(&self.output, "output")?;
                self.grid.points().map_err(|e| Error::Usage(e.to_string()))?;
                if self.grid.is_empty() {
                    return Err(Error::Usage("haze grid is empty".into()));
                }
            }
            Command::Train => {
                need(&self.output, "output")?;
                if self.manifest.is_none() && self.input.is_none() {
                    return Err(Error::Usage("train needs --input or --manifest".into()));
                }
                let usage = |e: Error| Error::Usage(e.to_string());
                self.network.validate().map_err(usage)?;
                self.train.validate().map_err(usage)?;
                if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
                    return Err(Error::Usage(format!("test_fraction must be in (0, 1), got {}", self.test_fraction)));
                }
            }
            Command::Dehaze => {
                need(&self.input, "input")?;
                need(&self.output, "output")?;
                need(&self.checkpoint, "checkpoint")?;
            }
            Command::Eval => {
                if self.manifest.is_none() {
                    need(&self.input, "input")?;
                    need(&self.truth, "truth")?;
                }
            }
        }
        Ok(self)
    }

    /// Manifest used by `train`: explicit, or `manifest.csv` inside the input directory.
    pub fn manifest_path(&self) -> Option<PathBuf> {
        self.manifest
            .clone()
            .or_else(|| self.input.as_ref().map(|d| d.join("manifest.csv")))
    }
}
