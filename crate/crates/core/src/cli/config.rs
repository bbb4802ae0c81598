//! Experiment configuration: built-in defaults, overridden by a
//! `key=value` file, overridden by command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{ModelConfig, Precision, Variant};
use crate::tasks::{TaskKind, TaskSpec};
use crate::train::{AdamConfig, CurriculumConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub task: TaskKind,
    /// Symbol count (the base for addition; masked copy is always binary).
    pub alphabet: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// `None` uses the task default (on for addition only).
    pub eos: Option<bool>,
    pub layers: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel_w: usize,
    pub kernel_h: usize,
    pub precision: Precision,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip: f64,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub curriculum: bool,
    pub curriculum_start: usize,
    pub curriculum_threshold: f64,
    pub checkpoint_every: u64,
    pub wall_clock: bool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let curriculum = CurriculumConfig::default();
        ExperimentConfig {
            variant: Variant::Baseline,
            task: TaskKind::Copy,
            alphabet: 4,
            min_len: 1,
            max_len: 8,
            eos: None,
            layers: 2,
            width: 4,
            channels: 32,
            kernel_w: 3,
            kernel_h: 3,
            precision: Precision::F32,
            dropout: 0.0,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            clip: 1.0,
            batch: 16,
            steps: 1000,
            seed: 1,
            curriculum: false,
            curriculum_start: curriculum.start_len,
            curriculum_threshold: curriculum.threshold,
            checkpoint_every: 0,
            wall_clock: true,
            out_dir: PathBuf::from("run"),
        }
    }
}

/// Every settable key, in file order.
pub const KEYS: &[&str] = &[
    "variant",
    "task",
    "alphabet",
    "min_len",
    "max_len",
    "eos",
    "layers",
    "width",
    "channels",
    "kernel_w",
    "kernel_h",
    "precision",
    "dropout",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "clip",
    "batch",
    "steps",
    "seed",
    "curriculum",
    "curriculum_start",
    "curriculum_threshold",
    "checkpoint_every",
    "wall_clock",
    "out_dir",
];

fn num<F: std::str::FromStr>(key: &str, value: &str) -> Result<F> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key}"))),
    }
}

impl ExperimentConfig {
    /// Sets one field from its textual form. Keys may use `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "variant" => self.variant = v.parse()?,
            "task" => self.task = v.parse()?,
            "alphabet" => self.alphabet = num(&key, v)?,
            "min_len" => self.min_len = num(&key, v)?,
            "max_len" => self.max_len = num(&key, v)?,
            "eos" => {
                self.eos = match v {
                    "auto" => None,
                    _ => Some(boolean(&key, v)?),
                }
            }
            "layers" => self.layers = num(&key, v)?,
            "width" => self.width = num(&key, v)?,
            "channels" => self.channels = num(&key, v)?,
            "kernel_w" => self.kernel_w = num(&key, v)?,
            "kernel_h" => self.kernel_h = num(&key, v)?,
            "precision" => self.precision = v.parse()?,
            "dropout" => self.dropout = num(&key, v)?,
            "lr" => self.lr = num(&key, v)?,
            "beta1" => self.beta1 = num(&key, v)?,
            "beta2" => self.beta2 = num(&key, v)?,
            "epsilon" => self.epsilon = num(&key, v)?,
            "clip" => self.clip = num(&key, v)?,
            "batch" => self.batch = num(&key, v)?,
            "steps" => self.steps = num(&key, v)?,
            "seed" => self.seed = num(&key, v)?,
            "curriculum" => self.curriculum = boolean(&key, v)?,
            "curriculum_start" => self.curriculum_start = num(&key, v)?,
            "curriculum_threshold" => self.curriculum_threshold = num(&key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(&key, v)?,
            "wall_clock" => self.wall_clock = boolean(&key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "variant" => self.variant.to_string(),
            "task" => self.task.to_string(),
            "alphabet" => self.alphabet.to_string(),
            "min_len" => self.min_len.to_string(),
            "max_len" => self.max_len.to_string(),
            "eos" => self.eos.map_or("auto".to_string(), |b| b.to_string()),
            "layers" => self.layers.to_string(),
            "width" => self.width.to_string(),
            "channels" => self.channels.to_string(),
            "kernel_w" => self.kernel_w.to_string(),
            "kernel_h" => self.kernel_h.to_string(),
            "precision" => self.precision.name().to_string(),
            "dropout" => self.dropout.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "clip" => self.clip.to_string(),
            "batch" => self.batch.to_string(),
            "steps" => self.steps.to_string(),
            "seed" => self.seed.to_string(),
            "curriculum" => self.curriculum.to_string(),
            "curriculum_start" => self.curriculum_start.to_string(),
            "curriculum_threshold" => self.curriculum_threshold.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "wall_clock" => self.wall_clock.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Every key, one `key=value` per line; [`apply_text`](Self::apply_text)
    /// reads it back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k).expect("known key"));
        }
        s
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        let mut spec = match self.task {
            TaskKind::Copy => TaskSpec::copy(self.alphabet, self.max_len),
            TaskKind::Reverse => TaskSpec::reverse(self.alphabet, self.max_len),
            TaskKind::Addition => TaskSpec::addition(self.alphabet, self.max_len),
            TaskKind::MaskedCopy { period } => TaskSpec::masked_copy(period, self.max_len),
        };
        spec.min_len = self.min_len;
        if let Some(eos) = self.eos {
            spec.eos = eos;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let task = self.task_spec()?;
        let c = ModelConfig {
            variant: self.variant,
            layers: self.layers,
            width: self.width,
            channels: self.channels,
            kernel_w: self.kernel_w,
            kernel_h: self.kernel_h,
            vocab_in: task.vocab_in(),
            vocab_out: task.vocab_out(),
            precision: self.precision,
            dropout: self.dropout,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(self.task_spec()?, self.steps, self.batch, self.seed);
        t.adam = AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        };
        t.clip = self.clip;
        t.curriculum = self.curriculum.then_some(CurriculumConfig {
            start_len: self.curriculum_start,
            threshold: self.curriculum_threshold,
            ..CurriculumConfig::default()
        });
        t.checkpoint_every = self.checkpoint_every;
        t.wall_clock = self.wall_clock;
        Ok(t)
    }
}
