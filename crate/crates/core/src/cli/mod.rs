//! The `gman` command line: `synth`, `train`, `dehaze` and `eval`.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, config keys or
//! values), 2 for data, format and I/O errors.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub use commands::{
    cmd_dehaze, cmd_eval, cmd_synth, cmd_train, dehaze_image, evaluate, format_metrics, list_ppm,
    MetricRow, METRICS_HEADER,
};
pub use config::{Command, RunConfig, CONFIG_KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "gman", version, about = "Single-image dehazing: synthesize, train, dehaze, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Build a hazy dataset and manifest from a directory of clear images
    Synth(Flags),
    /// Train a network on a synthesized dataset
    Train(Flags),
    /// Restore hazy images with a trained checkpoint
    Dehaze(Flags),
    /// Report PSNR and SSIM against ground truth
    Eval(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// `key = value` settings file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Ground-truth directory (eval)
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Synthesis manifest (train, eval)
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    /// Stop training after this many optimizer steps
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated atmosphere light values
    #[arg(long, value_name = "A1,A2,...")]
    grid_a: Option<String>,
    /// Comma-separated scattering coefficients
    #[arg(long, value_name = "B1,B2,...")]
    grid_beta: Option<String>,
    /// constant[:depth] | ramp | radial
    #[arg(long)]
    depth: Option<String>,
}

impl Flags {
    fn settings(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let text = |v: Option<String>| v;
        [
            ("seed", self.seed.map(|v| v.to_string())),
            ("input", path(&self.input)),
            ("output", path(&self.output)),
            ("checkpoint", path(&self.checkpoint)),
            ("truth", path(&self.truth)),
            ("manifest", path(&self.manifest)),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("crop", self.crop.map(|v| v.to_string())),
            ("steps", self.steps.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("grid_a", text(self.grid_a.clone())),
            ("grid_beta", text(self.grid_beta.clone())),
            ("depth", text(self.depth.clone())),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

/// Builds the run configuration: defaults, then `--config`, then flags.
fn resolve(command: Command, flags: &Flags) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(command);
    if let Some(path) = &flags.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in flags.settings() {
        cfg.set(key, &value)?;
    }
    cfg.finish()
}

fn execute(cfg: &RunConfig) -> Result<()> {
    match cfg.command {
        Command::Synth => cmd_synth(cfg).map(drop),
        Command::Train => cmd_train(cfg).map(drop),
        Command::Dehaze => cmd_dehaze(cfg).map(drop),
        Command::Eval => {
            let csv = cmd_eval(cfg)?;
            if cfg.output.is_none() {
                print!("{csv}");
            }
            Ok(())
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (command, flags) = match &cli.command {
        Sub::Synth(f) => (Command::Synth, f),
        Sub::Train(f) => (Command::Train, f),
        Sub::Dehaze(f) => (Command::Dehaze, f),
        Sub::Eval(f) => (Command::Eval, f),
    };
    match resolve(command, flags).and_then(|cfg| execute(&cfg)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("gman {command}: {e}");
            exit_code(&e)
        }
    }
}
