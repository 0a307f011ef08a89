//! Experiment configuration as flat `key = value` text.
//!
//! Keys are the long command-line flag names without the leading dashes
//! (`cell`, `budget`, `noise-std`, ...). `#` starts a comment. Later
//! assignments override earlier ones, which is how command-line overrides
//! are layered over a config file.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::cells::{CellKind, GruVariant};
use crate::data::{DEFAULT_FRACTIONS, DEFAULT_IN_LEN, DEFAULT_OUT_LEN};
use crate::error::{Error, Result};
use crate::heads::DEFAULT_COMPONENTS;
use crate::model::WEIGHT_NOISE_STD;
use crate::optim::{
    DEFAULT_CLIP_THRESHOLD, DEFAULT_EPSILON, DEFAULT_PATIENCE, DEFAULT_RHO, LR_LOG_HI, LR_LOG_LO,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    PianoRoll,
    Signal,
    Lag,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::PianoRoll => "pianoroll",
            Task::Signal => "signal",
            Task::Lag => "lag",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pianoroll" | "piano-roll" => Ok(Task::PianoRoll),
            "signal" => Ok(Task::Signal),
            "lag" => Ok(Task::Lag),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected pianoroll|signal|lag)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelSize {
    Hidden(usize),
    /// Largest hidden size whose cell fits in this many parameters.
    Budget(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Single dataset file, split by `seed`.
    pub data: Option<PathBuf>,
    /// Pre-split dataset files; all three or none.
    pub train_data: Option<PathBuf>,
    pub valid_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub dataset_name: Option<String>,
    /// Generator: number of sequences.
    pub num_seq: usize,
    /// Generator: steps per lag sequence, samples per signal sequence.
    pub seq_len: usize,
    pub lag: usize,
    pub dim: usize,
    pub tones: usize,
    pub cell: CellKind,
    pub size: ModelSize,
    pub gru_variant: GruVariant,
    pub seed: u64,
    /// Fixed learning rate; skips the search when set.
    pub lr: Option<f64>,
    pub lr_candidates: usize,
    pub lr_log_lo: f64,
    pub lr_log_hi: f64,
    /// Epoch budget per search candidate; `max(5, max_epochs/10)` when unset.
    pub search_epochs: Option<usize>,
    /// Train every candidate for the full epoch budget.
    pub full_search: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub noise_std: f64,
    pub clip: f64,
    pub rho: f64,
    pub rms_epsilon: f64,
    pub components: usize,
    pub in_len: usize,
    pub out_len: usize,
    /// Window stride; `out_len` when unset.
    pub stride: Option<usize>,
    pub init_scale: f64,
    pub batch_size: usize,
    pub split: (f64, f64, f64),
    pub run_name: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Lag,
            data: None,
            train_data: None,
            valid_data: None,
            test_data: None,
            dataset_name: None,
            num_seq: 100,
            seq_len: 100,
            lag: 20,
            dim: 1,
            tones: 3,
            cell: CellKind::Gru,
            size: ModelSize::Budget(5000),
            gru_variant: GruVariant::default(),
            seed: 0,
            lr: None,
            lr_candidates: 10,
            lr_log_lo: LR_LOG_LO,
            lr_log_hi: LR_LOG_HI,
            search_epochs: None,
            full_search: false,
            max_epochs: 100,
            patience: DEFAULT_PATIENCE,
            noise_std: WEIGHT_NOISE_STD,
            clip: DEFAULT_CLIP_THRESHOLD,
            rho: DEFAULT_RHO,
            rms_epsilon: DEFAULT_EPSILON,
            components: DEFAULT_COMPONENTS,
            in_len: DEFAULT_IN_LEN,
            out_len: DEFAULT_OUT_LEN,
            stride: None,
            init_scale: 1.0,
            batch_size: 1,
            split: DEFAULT_FRACTIONS,
            run_name: None,
        }
    }
}

/// Every recognized key, in the order `to_kv_text` writes them.
pub const CONFIG_KEYS: &[&str] = &[
    "task",
    "data",
    "train-data",
    "valid-data",
    "test-data",
    "dataset-name",
    "num-seq",
    "seq-len",
    "lag",
    "dim",
    "tones",
    "cell",
    "hidden",
    "budget",
    "gru-variant",
    "seed",
    "lr",
    "lr-candidates",
    "lr-log-lo",
    "lr-log-hi",
    "search-epochs",
    "full-search",
    "max-epochs",
    "patience",
    "noise-std",
    "clip",
    "rho",
    "rms-epsilon",
    "components",
    "in-len",
    "out-len",
    "stride",
    "init-scale",
    "batch-size",
    "split",
    "run-name",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn optional(value: &str) -> Option<&str> {
    let v = value.trim();
    (!v.is_empty() && v != "none").then_some(v)
}

impl ExperimentConfig {
    /// Assigns one key. `hidden` and `budget` replace each other.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        match k {
            "task" => self.task = value.parse()?,
            "data" => self.data = optional(value).map(PathBuf::from),
            "train-data" => self.train_data = optional(value).map(PathBuf::from),
            "valid-data" => self.valid_data = optional(value).map(PathBuf::from),
            "test-data" => self.test_data = optional(value).map(PathBuf::from),
            "dataset-name" => self.dataset_name = optional(value).map(str::to_string),
            "num-seq" => self.num_seq = parse(k, value)?,
            "seq-len" => self.seq_len = parse(k, value)?,
            "lag" => self.lag = parse(k, value)?,
            "dim" => self.dim = parse(k, value)?,
            "tones" => self.tones = parse(k, value)?,
            "cell" => self.cell = value.parse()?,
            "hidden" => self.size = ModelSize::Hidden(parse(k, value)?),
            "budget" => self.size = ModelSize::Budget(parse(k, value)?),
            "gru-variant" => {
                self.gru_variant = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "seed" => self.seed = parse(k, value)?,
            "lr" => self.lr = optional(value).map(|v| parse(k, v)).transpose()?,
            "lr-candidates" => self.lr_candidates = parse(k, value)?,
            "lr-log-lo" => self.lr_log_lo = parse(k, value)?,
            "lr-log-hi" => self.lr_log_hi = parse(k, value)?,
            "search-epochs" => self.search_epochs = optional(value).map(|v| parse(k, v)).transpose()?,
            "full-search" => self.full_search = parse_bool(k, value)?,
            "max-epochs" => self.max_epochs = parse(k, value)?,
            "patience" => self.patience = parse(k, value)?,
            "noise-std" => self.noise_std = parse(k, value)?,
            "clip" => self.clip = parse(k, value)?,
            "rho" => self.rho = parse(k, value)?,
            "rms-epsilon" => self.rms_epsilon = parse(k, value)?,
            "components" => self.components = parse(k, value)?,
            "in-len" => self.in_len = parse(k, value)?,
            "out-len" => self.out_len = parse(k, value)?,
            "stride" => self.stride = optional(value).map(|v| parse(k, v)).transpose()?,
            "init-scale" => self.init_scale = parse(k, value)?,
            "batch-size" => self.batch_size = parse(k, value)?,
            "split" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse(k, p))
                    .collect::<Result<_>>()?;
                match parts[..] {
                    [a, b, c] => self.split = (a, b, c),
                    _ => return Err(Error::Config(format!("split: expected three fractions, got {value:?}"))),
                }
            }
            "run-name" => self.run_name = optional(value).map(str::to_string),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Setting both `hidden`
    /// and `budget` in one file is an error.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        let mut size_keys = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let key = key.trim();
            if matches!(key, "hidden" | "budget") {
                size_keys += 1;
            }
            self.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        if size_keys > 1 {
            return Err(Error::Config("set exactly one of hidden / budget".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_kv_text(&text)
    }

    /// Full round-trippable listing of every key.
    pub fn to_kv_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut out = String::new();
        for &key in CONFIG_KEYS {
            let value = match key {
                "task" => self.task.to_string(),
                "data" => path(&self.data),
                "train-data" => path(&self.train_data),
                "valid-data" => path(&self.valid_data),
                "test-data" => path(&self.test_data),
                "dataset-name" => opt(self.dataset_name.clone()),
                "num-seq" => self.num_seq.to_string(),
                "seq-len" => self.seq_len.to_string(),
                "lag" => self.lag.to_string(),
                "dim" => self.dim.to_string(),
                "tones" => self.tones.to_string(),
                "cell" => self.cell.to_string(),
                "hidden" => match self.size {
                    ModelSize::Hidden(n) => n.to_string(),
                    ModelSize::Budget(_) => continue,
                },
                "budget" => match self.size {
                    ModelSize::Budget(b) => b.to_string(),
                    ModelSize::Hidden(_) => continue,
                },
                "gru-variant" => self.gru_variant.to_string(),
                "seed" => self.seed.to_string(),
                "lr" => opt(self.lr.map(|v| format!("{v:?}"))),
                "lr-candidates" => self.lr_candidates.to_string(),
                "lr-log-lo" => format!("{:?}", self.lr_log_lo),
                "lr-log-hi" => format!("{:?}", self.lr_log_hi),
                "search-epochs" => opt(self.search_epochs.map(|v| v.to_string())),
                "full-search" => self.full_search.to_string(),
                "max-epochs" => self.max_epochs.to_string(),
                "patience" => self.patience.to_string(),
                "noise-std" => format!("{:?}", self.noise_std),
                "clip" => format!("{:?}", self.clip),
                "rho" => format!("{:?}", self.rho),
                "rms-epsilon" => format!("{:?}", self.rms_epsilon),
                "components" => self.components.to_string(),
                "in-len" => self.in_len.to_string(),
                "out-len" => self.out_len.to_string(),
                "stride" => opt(self.stride.map(|v| v.to_string())),
                "init-scale" => format!("{:?}", self.init_scale),
                "batch-size" => self.batch_size.to_string(),
                "split" => format!("{:?},{:?},{:?}", self.split.0, self.split.1, self.split.2),
                "run-name" => opt(self.run_name.clone()),
                _ => unreachable!("every key is listed"),
            };
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        match self.size {
            ModelSize::Hidden(0) => return Err(Error::Config("hidden must be >= 1".into())),
            ModelSize::Budget(0) => return Err(Error::Config("budget must be >= 1".into())),
            _ => {}
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("noise-std must be >= 0, got {}", self.noise_std)));
        }
        positive("clip", self.clip)?;
        positive("rms-epsilon", self.rms_epsilon)?;
        positive("init-scale", self.init_scale)?;
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        if let Some(lr) = self.lr {
            positive("lr", lr)?;
        } else if self.lr_candidates == 0 {
            return Err(Error::Config("lr-candidates must be >= 1 when lr is not fixed".into()));
        }
        if !(self.lr_log_lo < self.lr_log_hi) {
            return Err(Error::Config("lr-log-lo must be below lr-log-hi".into()));
        }
        for (name, v) in [
            ("batch-size", self.batch_size),
            ("components", self.components),
            ("in-len", self.in_len),
            ("out-len", self.out_len),
            ("dim", self.dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.stride == Some(0) {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        let (a, b, c) = self.split;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {:?}", self.split)));
        }
        let presplit = [&self.train_data, &self.valid_data, &self.test_data];
        let given = presplit.iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err(Error::Config("give all of train-data, valid-data and test-data, or none".into()));
        }
        if given == 3 && self.data.is_some() {
            return Err(Error::Config("data and train/valid/test-data are mutually exclusive".into()));
        }
        if self.task == Task::PianoRoll && given == 0 && self.data.is_none() {
            return Err(Error::Config("the pianoroll task needs data or train/valid/test-data".into()));
        }
        if self.task == Task::Lag && self.seq_len <= self.lag {
            return Err(Error::Config(format!(
                "lag task needs seq-len > lag (got {} and {})",
                self.seq_len, self.lag
            )));
        }
        Ok(())
    }

    pub fn search_epochs(&self) -> usize {
        if self.full_search {
            return self.max_epochs;
        }
        self.search_epochs
            .unwrap_or_else(|| (self.max_epochs / 10).max(5))
            .min(self.max_epochs.max(1))
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.out_len)
    }

    pub fn dataset_label(&self) -> String {
        if let Some(name) = &self.dataset_name {
            return name.clone();
        }
        match self.task {
            Task::Lag => format!("lag{}", self.lag),
            Task::Signal if self.data.is_none() && self.train_data.is_none() => "synthetic-signal".into(),
            _ => {
                let p = self.data.as_ref().or(self.train_data.as_ref());
                p.and_then(|p| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| self.task.to_string())
            }
        }
    }

    pub fn run_label(&self) -> String {
        self.run_name
            .clone()
            .unwrap_or_else(|| format!("{}_{}_s{}", self.dataset_label(), self.cell, self.seed))
    }
}
