//! Run configuration: flat `key = value` files, overridable key by key.
//!
//! Keys are the long command-line flag names without the leading dashes
//! (`lr`, `batch-size`, `invert-inputs`, ...). Blank lines and lines
//! starting with `#` are ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{self, Dataset, SignalSpec, TransformSpec};
use crate::error::{Error, Result};
use crate::network::Activation;
use crate::optim::{Algorithm, OptimizerConfig};
use crate::outputs::OutputKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Csv,
    SyntheticEeg,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Csv => "csv",
            DatasetKind::SyntheticEeg => "synthetic-eeg",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "csv" => Ok(DatasetKind::Csv),
            "synthetic-eeg" => Ok(DatasetKind::SyntheticEeg),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// MNIST directory, or the CSV file.
    pub data_dir: PathBuf,
    /// CSV columns used as regression targets; none means autoencoding.
    pub csv_targets: Vec<usize>,
    pub csv_header: bool,
    /// Keep only the first `limit` samples.
    pub limit: Option<usize>,
    /// Held-out samples taken from the end of the data.
    pub valid: usize,
    /// Train to reconstruct the inputs instead of the labels.
    pub autoencode: bool,
    pub signal: SignalSpec,
    pub transform: TransformSpec,

    pub arch: Vec<usize>,
    pub activation: Activation,
    pub output: OutputKind,
    pub dropout: f64,
    pub input_dropout: f64,
    /// Incoming connections per hidden unit; `None` is fully connected.
    pub sparsity: Option<usize>,

    pub optimizer: OptimizerConfig,
    pub lr_grid: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Samples used to initialize the metric before the first step.
    pub warmup: usize,
    pub seed: u64,

    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist5k"),
            csv_targets: Vec::new(),
            csv_header: false,
            limit: None,
            valid: 1000,
            autoencode: false,
            signal: SignalSpec::default(),
            transform: TransformSpec::default(),
            arch: vec![784, 100, 10],
            activation: Activation::Sigmoid,
            output: OutputKind::Categorical,
            dropout: 0.0,
            input_dropout: 0.0,
            sparsity: None,
            optimizer: OptimizerConfig::default(),
            lr_grid: (-5..=0).map(|k| 10f64.powi(k)).collect(),
            epochs: 10,
            batch_size: 100,
            warmup: 0,
            seed: 1,
            log: None,
            checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "dataset" => self.dataset = value.parse()?,
            "data-dir" => self.data_dir = PathBuf::from(value),
            "csv-targets" => self.csv_targets = parse_list(key, value)?,
            "csv-header" => self.csv_header = parse_bool(key, value)?,
            "limit" => self.limit = optional(key, value)?,
            "valid" => self.valid = parse(key, value)?,
            "autoencode" => self.autoencode = parse_bool(key, value)?,
            "channels" => self.signal.channels = parse(key, value)?,
            "samples" => self.signal.samples = parse(key, value)?,
            "sources" => self.signal.sources = parse(key, value)?,
            "noise" => self.signal.noise = parse(key, value)?,
            "signal-seed" => self.signal.seed = parse(key, value)?,
            "invert-inputs" => self.transform.invert = parse_bool(key, value)?,
            "arch" => self.arch = parse_list(key, value)?,
            "activation" => self.activation = value.parse()?,
            "output" => self.output = value.parse()?,
            "dropout" => self.dropout = parse(key, value)?,
            "input-dropout" => self.input_dropout = parse(key, value)?,
            "sparsity" => self.sparsity = optional(key, value)?,
            "algo" => self.optimizer.algo = value.parse()?,
            "lr" => self.optimizer.eta = parse(key, value)?,
            "gamma" => self.optimizer.gamma = parse(key, value)?,
            "epsilon" => self.optimizer.epsilon = parse(key, value)?,
            "nmc" => self.optimizer.n_mc = parse(key, value)?,
            "lr-grid" => self.lr_grid = parse_list(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch-size" => self.batch_size = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "log" => self.log = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Defaults overridden by a config file. Relative paths in the file are
    /// kept relative to the working directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.arch.len() < 2 {
            return Err(Error::Config("arch needs at least two layer sizes".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be at least 1".into()));
        }
        for (name, p) in [("dropout", self.dropout), ("input-dropout", self.input_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        if self.lr_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Config("lr-grid values must be positive".into()));
        }
        match self.dataset {
            DatasetKind::Mnist => {
                data::mnist_paths(&self.data_dir)?;
            }
            DatasetKind::Csv => {
                if !self.data_dir.is_file() {
                    return Err(Error::Config(format!(
                        "CSV file {} not found",
                        self.data_dir.display()
                    )));
                }
            }
            DatasetKind::SyntheticEeg => {}
        }
        Ok(())
    }

    /// Loads, transforms and splits the data. The validation part is `None`
    /// when `valid` is 0.
    pub fn load_data(&self) -> Result<(Dataset, Option<Dataset>)> {
        let mut ds = match self.dataset {
            DatasetKind::Mnist => data::load_mnist(&self.data_dir)?,
            DatasetKind::Csv => data::load_csv(&self.data_dir, &self.csv_targets, self.csv_header)?,
            DatasetKind::SyntheticEeg => data::synthetic_signals(&self.signal)?,
        };
        if let Some(n) = self.limit {
            ds = ds.head(n);
        }
        ds = data::apply_transform(&ds, &self.transform)?;
        if self.autoencode {
            ds = ds.into_autoencoder();
        }
        if self.valid >= ds.len() {
            return Err(Error::Config(format!(
                "{} validation samples leave nothing to train on ({} total)",
                self.valid,
                ds.len()
            )));
        }
        let (train, valid) = ds.split_tail(self.valid)?;
        Ok((train, (!valid.is_empty()).then_some(valid)))
    }

    /// Checks the architecture against the data.
    pub fn check_shapes(&self, train: &Dataset) -> Result<()> {
        let (first, last) = (self.arch[0], *self.arch.last().expect("validated"));
        if first != train.dim() {
            return Err(Error::Config(format!(
                "arch starts with {first} inputs but the data has {}",
                train.dim()
            )));
        }
        if last != train.target_dim() {
            return Err(Error::Config(format!(
                "arch ends with {last} outputs but the targets need {}",
                train.target_dim()
            )));
        }
        let classes = matches!(train.targets(), data::Targets::Classes { .. });
        if classes != (self.output == OutputKind::Categorical) {
            return Err(Error::Config(format!(
                "output `{}` does not fit {} targets",
                self.output,
                if classes { "class" } else { "real-valued" }
            )));
        }
        Ok(())
    }

    /// Same configuration with another algorithm and step-size.
    pub fn with_optimizer(&self, algo: Algorithm, eta: f64) -> Self {
        let mut cfg = self.clone();
        cfg.optimizer.algo = algo;
        cfg.optimizer.eta = eta;
        cfg
    }
}
