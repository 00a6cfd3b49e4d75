//! Flat `key=value` run configuration.
//!
//! Values are resolved in order: built-in defaults (with `SUMGAN_SEED` as the
//! seed default), then the config file, then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sumgan_core::evaluation::EvalConfig;
use sumgan_core::models::{ModelDims, Variant};
use sumgan_core::trainer::{ExperimentConfig, TrainConfig};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "SUMGAN_SEED";

pub const KEYS: &[&str] = &[
    "variant",
    "dataset",
    "out",
    "seed",
    "epochs",
    "lr_main",
    "lr_discriminator",
    "sigma",
    "folds",
    "grad_clip_norm",
    "beta1",
    "beta2",
    "adam_eps",
    "dim",
    "hidden",
    "heads",
    "recurrent_layers",
    "budget_fraction",
    "gt_threshold",
    "parallel_folds",
    "videos",
    "frames",
    "feature_dim",
    "checkpoint",
    "video",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `None` until set; commands that need one default to AED.
    pub variant: Option<Variant>,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub eval: EvalConfig,
    pub parallel_folds: usize,
    pub videos: usize,
    pub frames: usize,
    pub feature_dim: usize,
    pub checkpoint: Option<PathBuf>,
    pub video: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: None,
            dataset: None,
            out: PathBuf::from("out"),
            train: TrainConfig::default(),
            dims: ModelDims::default(),
            eval: EvalConfig::default(),
            parallel_folds: 1,
            videos: 25,
            frames: 120,
            feature_dim: 1024,
            checkpoint: None,
            video: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| CliError::Setting {
        key: key.to_string(),
        detail: format!("{value:?}: {e}"),
    })
}

impl RunConfig {
    /// Defaults, with the seed taken from `SUMGAN_SEED` when that is set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = Self::default();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.set("seed", &seed)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "variant" => {
                self.variant = Some(Variant::from_str(value).map_err(|e| CliError::Setting {
                    key: key.into(),
                    detail: e.to_string(),
                })?)
            }
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.train.seed = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "lr_main" => self.train.lr_main = parse(key, value)?,
            "lr_discriminator" => self.train.lr_discriminator = parse(key, value)?,
            "sigma" => self.train.sigma = parse(key, value)?,
            "folds" => self.train.folds = parse(key, value)?,
            "grad_clip_norm" => self.train.grad_clip_norm = parse(key, value)?,
            "beta1" => self.train.beta1 = parse(key, value)?,
            "beta2" => self.train.beta2 = parse(key, value)?,
            "adam_eps" => self.train.adam_eps = parse(key, value)?,
            "dim" => self.dims.dim = parse(key, value)?,
            "hidden" => self.dims.hidden = parse(key, value)?,
            "heads" => self.dims.heads = parse(key, value)?,
            "recurrent_layers" => self.dims.recurrent_layers = parse(key, value)?,
            "budget_fraction" => self.eval.budget_fraction = parse(key, value)?,
            "gt_threshold" => self.eval.gt_threshold = parse(key, value)?,
            "parallel_folds" => self.parallel_folds = parse(key, value)?,
            "videos" => self.videos = parse(key, value)?,
            "frames" => self.frames = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "video" => self.video = Some(value.to_string()),
            _ => {
                return Err(CliError::Setting {
                    key: key.to_string(),
                    detail: format!("unknown key (expected one of {})", KEYS.join(", ")),
                })
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |detail: String| CliError::ConfigFile {
                path: path.to_path_buf(),
                line: i + 1,
                detail,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key=value, got {line:?}")))?;
            self.set(k.trim(), v).map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Applies `KEY=VALUE` strings from `--set`.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair.split_once('=').ok_or_else(|| CliError::Setting {
                key: pair.to_string(),
                detail: "expected KEY=VALUE".into(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn variant_or_default(&self) -> Variant {
        self.variant.unwrap_or(Variant::Aed)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            variant: self.variant_or_default(),
            dims: self.dims,
            train: self.train,
            eval: self.eval,
        }
    }

    /// Every resolved setting as `key=value` lines, loadable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let d = &self.dims;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let rows: Vec<(&str, Option<String>)> = vec![
            ("variant", Some(self.variant_or_default().name().to_string())),
            ("dataset", path(&self.dataset)),
            ("out", Some(self.out.display().to_string())),
            ("seed", Some(t.seed.to_string())),
            ("epochs", Some(t.epochs.to_string())),
            ("lr_main", Some(t.lr_main.to_string())),
            ("lr_discriminator", Some(t.lr_discriminator.to_string())),
            ("sigma", Some(t.sigma.to_string())),
            ("folds", Some(t.folds.to_string())),
            ("grad_clip_norm", Some(t.grad_clip_norm.to_string())),
            ("beta1", Some(t.beta1.to_string())),
            ("beta2", Some(t.beta2.to_string())),
            ("adam_eps", Some(t.adam_eps.to_string())),
            ("dim", Some(d.dim.to_string())),
            ("hidden", Some(d.hidden.to_string())),
            ("heads", Some(d.heads.to_string())),
            ("recurrent_layers", Some(d.recurrent_layers.to_string())),
            ("budget_fraction", Some(self.eval.budget_fraction.to_string())),
            ("gt_threshold", Some(self.eval.gt_threshold.to_string())),
            ("parallel_folds", Some(self.parallel_folds.to_string())),
        ];
        rows.into_iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={v}\n")))
            .collect()
    }
}
