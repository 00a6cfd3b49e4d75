pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sumgan_core::tensor::Fault;

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sumgan", version, about = "Unsupervised adversarial video summarization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Falls back to $SUMGAN_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SUM-GAN, AED, STD, ST, STSED or SAT
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross-validated training and evaluation
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        /// Width after the compression layer
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        parallel_folds: Option<usize>,
    },
    /// Evaluate a checkpoint on every video of a dataset
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Key-shot summary of one video
    Summarize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        video: Option<String>,
    },
    /// Finite-difference gradient check of every variant
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Corrupt the sigmoid backward rule (negative control)
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write a synthetic dataset with a planted segment
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        /// Per-frame feature size
        #[arg(long)]
        dim: Option<usize>,
    },
}

fn push<T: ToString>(pairs: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        pairs.push((key, v.to_string()));
    }
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Summarize { common, .. }
            | Command::Gradcheck { common, .. }
            | Command::Synth { common, .. } => common,
        }
    }

    /// Dedicated flags as `(key, value)` pairs.
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let mut p = Vec::new();
        let c = self.common();
        push(&mut p, "seed", &c.seed);
        push(&mut p, "out", &path(&c.out));
        push(&mut p, "variant", &c.variant);
        match self {
            Command::Train { dataset, epochs, folds, dim, hidden, parallel_folds, .. } => {
                push(&mut p, "dataset", &path(dataset));
                push(&mut p, "epochs", epochs);
                push(&mut p, "folds", folds);
                push(&mut p, "dim", dim);
                push(&mut p, "hidden", hidden);
                push(&mut p, "parallel_folds", parallel_folds);
            }
            Command::Eval { dataset, checkpoint, .. } => {
                push(&mut p, "dataset", &path(dataset));
                push(&mut p, "checkpoint", &path(checkpoint));
            }
            Command::Summarize { dataset, checkpoint, video, .. } => {
                push(&mut p, "dataset", &path(dataset));
                push(&mut p, "checkpoint", &path(checkpoint));
                push(&mut p, "video", video);
            }
            Command::Gradcheck { .. } => {}
            Command::Synth { videos, frames, dim, .. } => {
                push(&mut p, "videos", videos);
                push(&mut p, "frames", frames);
                push(&mut p, "feature_dim", dim);
            }
        }
        p
    }

    /// Defaults, then `--config`, then `--set`, then dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let c = self.common();
        let mut cfg = RunConfig::from_env()?;
        if let Some(file) = &c.config {
            cfg.apply_file(file)?;
        }
        cfg.apply_overrides(c.set.iter().map(String::as_str))?;
        for (k, v) in self.flag_pairs() {
            cfg.set(k, &v)?;
        }
        Ok(cfg)
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let cfg = cli.command.resolve()?;
    match &cli.command {
        Command::Train { .. } => commands::train(&cfg, stdout),
        Command::Eval { .. } => commands::eval(&cfg, stdout),
        Command::Summarize { .. } => commands::summarize(&cfg, stdout),
        Command::Gradcheck { inject_fault, .. } => {
            commands::gradcheck(&cfg, inject_fault.then_some(Fault::SigmoidBackward), stdout)
        }
        Command::Synth { .. } => commands::synth(&cfg, stdout).map(|_| ()),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
