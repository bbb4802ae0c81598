//! Teacher-forced training: batched gradients, Adam, clipping, curriculum,
//! metrics and checkpoints.
//!
//! Randomness is positional. Batch `b` uses samples `b·batch .. (b+1)·batch`
//! of the data stream, and sample `j` of that batch draws dropout from
//! stream `b·batch + j` of the dropout seed. A checkpoint therefore only
//! needs the seed and the step counter to resume bit-identically.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use optim::{clip_global_norm, global_norm, Adam, AdamConfig};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Eager, ParamGrads, Tape};
use crate::error::{Error, Result};
use crate::exec::map_ordered;
use crate::models::{forward, memory_len, Dropout, Model, ModelConfig, ModelVars};
use crate::tasks::{TaskSample, TaskSpec};
use crate::tensor::{Real, Tensor};

/// Derives an independent seed for one purpose of a run.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.next_u64()
}

const INIT_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

/// Teacher-forced statistics of one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleStats {
    pub nll: f64,
    pub symbols: usize,
    pub correct: usize,
    pub sequence_correct: bool,
}

/// Aggregate over a set of samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalStats {
    pub nll: f64,
    pub symbols: usize,
    pub correct: usize,
    pub sequences: usize,
    pub sequences_correct: usize,
}

impl EvalStats {
    pub fn add(&mut self, s: &SampleStats) {
        self.nll += s.nll;
        self.symbols += s.symbols;
        self.correct += s.correct;
        self.sequences += 1;
        self.sequences_correct += usize::from(s.sequence_correct);
    }

    /// Mean negative log-likelihood per target symbol (nats).
    pub fn log_perplexity(&self) -> f64 {
        self.nll / self.symbols.max(1) as f64
    }

    pub fn perplexity(&self) -> f64 {
        self.log_perplexity().exp()
    }

    pub fn per_symbol_accuracy(&self) -> f64 {
        self.correct as f64 / self.symbols.max(1) as f64
    }

    pub fn sequence_accuracy(&self) -> f64 {
        self.sequences_correct as f64 / self.sequences.max(1) as f64
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn score<T: Real>(logits: &Tensor<T>, targets: &[usize], nll: f64) -> SampleStats {
    let v = logits.shape()[1];
    let correct = targets
        .iter()
        .enumerate()
        .filter(|&(k, &t)| argmax(&logits.data()[k * v..(k + 1) * v]) == t)
        .count();
    SampleStats {
        nll,
        symbols: targets.len(),
        correct,
        sequence_correct: correct == targets.len(),
    }
}

/// Teacher-forced statistics with memory length `n` (defaults to the
/// sample's own [`memory_len`]).
pub fn evaluate_sample<T: Real>(model: &Model<T>, sample: &TaskSample, n: Option<usize>) -> Result<SampleStats> {
    let mut g = Eager;
    let vars = ModelVars::bind(&model.config, &model.params.bind(&mut g))?;
    let n = n.unwrap_or_else(|| memory_len(&model.config, &sample.input, &sample.target));
    let out = forward(&model.config, &mut g, &vars, &sample.input, &sample.target, n, None)?;
    Ok(score(&out.logits, &sample.target, out.nll_sum.item().to_f64()))
}

/// Teacher-forced statistics over a set evaluated as one batch, at the
/// batch memory length.
pub fn evaluate<T: Real>(model: &Model<T>, samples: &[TaskSample]) -> Result<EvalStats> {
    let n = batch_memory_len(&model.config, samples);
    let per = map_ordered(samples, |_, s| evaluate_sample(model, s, Some(n)));
    let mut stats = EvalStats::default();
    for s in per {
        stats.add(&s?);
    }
    Ok(stats)
}

/// Memory length shared by a batch: the largest per-sample requirement.
pub fn batch_memory_len(config: &ModelConfig, batch: &[TaskSample]) -> usize {
    batch
        .iter()
        .map(|s| memory_len(config, &s.input, &s.target))
        .max()
        .unwrap_or(1)
}

/// Gradient of the token-averaged loss over a batch.
#[derive(Debug, Clone)]
pub struct BatchGradient<T> {
    pub grads: ParamGrads<T>,
    pub stats: EvalStats,
}

impl<T> BatchGradient<T> {
    pub fn loss(&self) -> f64 {
        self.stats.log_perplexity()
    }
}

fn sample_gradient<T: Real>(
    model: &Model<T>,
    sample: &TaskSample,
    n: usize,
    dropout: Option<(f64, u64, u64)>,
) -> Result<(ParamGrads<T>, SampleStats)> {
    let mut tape = Tape::<T>::new();
    let bound = model.params.bind(&mut tape);
    let vars = ModelVars::bind(&model.config, &bound)?;
    let mut rng;
    let mut drop = match dropout {
        Some((rate, seed, stream)) if rate > 0.0 => {
            rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            Some(Dropout { rate, rng: &mut rng })
        }
        _ => None,
    };
    let out = forward(&model.config, &mut tape, &vars, &sample.input, &sample.target, n, drop.as_mut())?;
    let nll = tape.tensor(out.nll_sum).item().to_f64();
    let stats = score(tape.tensor(out.logits), &sample.target, nll);
    if !nll.is_finite() {
        return Ok((ParamGrads::default(), stats));
    }
    let mut grads = tape.backward(out.nll_sum)?;
    Ok((bound.gradients(&tape, &mut grads), stats))
}

/// Sums per-sample gradients in sample order and divides by the number of
/// target symbols. `dropout` is `(rate, seed, first_stream)`.
pub fn batch_gradient<T: Real>(
    model: &Model<T>,
    batch: &[TaskSample],
    dropout: Option<(f64, u64, u64)>,
) -> Result<BatchGradient<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = batch_memory_len(&model.config, batch);
    let per = map_ordered(batch, |j, s| {
        let d = dropout.map(|(rate, seed, first)| (rate, seed, first + j as u64));
        sample_gradient(model, s, n, d)
    });
    let mut grads = model.params.zeros_like().iter().map(|(k, v)| (k.clone(), v.clone())).collect::<ParamGrads<T>>();
    let mut stats = EvalStats::default();
    for r in per {
        let (g, s) = r?;
        optim::accumulate(&mut grads, &g)?;
        stats.add(&s);
    }
    optim::scale_all(&mut grads, 1.0 / stats.symbols.max(1) as f64);
    Ok(BatchGradient { grads, stats })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumConfig {
    pub start_len: usize,
    /// Advance when the smoothed per-symbol accuracy exceeds this.
    pub threshold: f64,
    /// Weight of the newest batch in the smoothed accuracy.
    pub smoothing: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            start_len: 4,
            threshold: 0.95,
            smoothing: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumState {
    pub len: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskSpec,
    /// Stop once this many updates have been applied in total.
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub clip: f64,
    pub curriculum: Option<CurriculumConfig>,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Record elapsed milliseconds in the metrics; when off the column is
    /// 0 so that reruns produce byte-identical files.
    pub wall_clock: bool,
}

impl TrainConfig {
    pub fn new(task: TaskSpec, steps: u64, batch: usize, seed: u64) -> Self {
        TrainConfig {
            task,
            steps,
            batch,
            seed,
            adam: AdamConfig::default(),
            clip: 1.0,
            curriculum: None,
            checkpoint_every: 0,
            wall_clock: true,
        }
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub wall_ms: u64,
    pub loss: f64,
    pub per_symbol_acc: f64,
    pub seq_acc: f64,
    pub curriculum_len: usize,
}

pub const METRICS_HEADER: &str = "step,wall_ms,loss,per_symbol_acc,seq_acc,curriculum_len";

impl StepRecord {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.wall_ms, self.loss, self.per_symbol_acc, self.seq_acc, self.curriculum_len
        )
    }
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

pub struct Trainer<T> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub step: u64,
    pub curriculum: Option<CurriculumState>,
    pub config: TrainConfig,
}

impl<T: Real> Trainer<T> {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.task.validate()?;
        if config.task.vocab_in() > model_config.vocab_in || config.task.vocab_out() != model_config.vocab_out {
            return Err(Error::Config(format!(
                "model vocabularies {}/{} do not fit task {}",
                model_config.vocab_in,
                model_config.vocab_out,
                config.task.canonical()
            )));
        }
        if config.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        let model = Model::init(model_config, derive_seed(config.seed, INIT_STREAM))?;
        let adam = Adam::new(config.adam, &model.params);
        let curriculum = config.curriculum.map(|c| CurriculumState {
            len: c.start_len.clamp(config.task.min_len, config.task.max_len),
            accuracy: 0.0,
        });
        Ok(Trainer {
            model,
            adam,
            step: 0,
            curriculum,
            config,
        })
    }

    /// Continues from a checkpoint; the run seed must match.
    pub fn resume(ckpt: Checkpoint<T>, config: TrainConfig) -> Result<Self> {
        if ckpt.seed != config.seed {
            return Err(Error::Config(format!(
                "checkpoint was trained with seed {}, not {}",
                ckpt.seed, config.seed
            )));
        }
        let mut adam = ckpt.adam;
        adam.config = config.adam;
        Ok(Trainer {
            model: ckpt.model,
            adam,
            step: ckpt.step,
            curriculum: ckpt.curriculum,
            config,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            adam: self.adam.clone(),
            step: self.step,
            seed: self.config.seed,
            curriculum: self.curriculum,
        }
    }

    /// Task restricted to the current curriculum length.
    pub fn current_task(&self) -> TaskSpec {
        match self.curriculum {
            Some(c) => self.config.task.with_max_len(c.len),
            None => self.config.task,
        }
    }

    pub fn batch(&self, step: u64) -> Vec<TaskSample> {
        let task = self.current_task();
        let seed = derive_seed(self.config.seed, DATA_STREAM);
        let first = step * self.config.batch as u64;
        (0..self.config.batch as u64).map(|j| task.sample(seed, first + j)).collect()
    }

    /// One update. On a non-finite loss or gradient the state is left
    /// untouched and [`Error::Divergence`] is returned.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let batch = self.batch(self.step);
        let dropout = (self.model.config.dropout > 0.0).then(|| {
            (
                self.model.config.dropout,
                derive_seed(self.config.seed, DROPOUT_STREAM),
                self.step * self.config.batch as u64,
            )
        });
        let mut bg = match batch_gradient(&self.model, &batch, dropout) {
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Divergence {
                    step: self.step + 1,
                    loss: f64::NAN,
                })
            }
            r => r?,
        };
        let loss = bg.loss();
        let diverged = Error::Divergence {
            step: self.step + 1,
            loss,
        };
        if !loss.is_finite() {
            return Err(diverged);
        }
        match clip_global_norm(&mut bg.grads, self.config.clip) {
            Err(Error::NonFinite { .. }) => return Err(diverged),
            r => r?,
        };
        match self.adam.step(&mut self.model.params, &bg.grads) {
            Err(Error::NonFinite { .. }) => return Err(diverged),
            r => r?,
        }
        self.step += 1;
        let acc = bg.stats.per_symbol_accuracy();
        if let (Some(state), Some(cfg)) = (self.curriculum.as_mut(), self.config.curriculum) {
            state.accuracy = (1.0 - cfg.smoothing) * state.accuracy + cfg.smoothing * acc;
            if state.accuracy > cfg.threshold && state.len < self.config.task.max_len {
                state.len += 1;
                state.accuracy = 0.0;
            }
        }
        Ok(StepRecord {
            step: self.step,
            wall_ms: 0,
            loss,
            per_symbol_acc: acc,
            seq_acc: bg.stats.sequence_accuracy(),
            curriculum_len: self.current_task().max_len,
        })
    }

    /// Trains until `config.steps` updates have been applied, appending to
    /// the metrics CSV and writing checkpoints. On divergence the last good
    /// state is checkpointed before the error is returned.
    pub fn run(&mut self, outputs: &RunOutputs, mut on_step: impl FnMut(&StepRecord)) -> Result<()> {
        let mut metrics = match &outputs.metrics {
            Some(path) => Some(open_metrics(path)?),
            None => None,
        };
        let started = Instant::now();
        while self.step < self.config.steps {
            let mut rec = match self.train_step() {
                Ok(r) => r,
                Err(e @ Error::Divergence { .. }) => {
                    if let Some(path) = &outputs.checkpoint {
                        save_checkpoint(path, &self.checkpoint())?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if self.config.wall_clock {
                rec.wall_ms = started.elapsed().as_millis() as u64;
            }
            if let Some(f) = metrics.as_mut() {
                writeln!(f, "{}", rec.csv())?;
            }
            on_step(&rec);
            let every = self.config.checkpoint_every;
            if let Some(path) = &outputs.checkpoint {
                if every > 0 && self.step % every == 0 && self.step < self.config.steps {
                    save_checkpoint(path, &self.checkpoint())?;
                }
            }
        }
        if let Some(mut f) = metrics {
            f.flush()?;
        }
        if let Some(path) = &outputs.checkpoint {
            save_checkpoint(path, &self.checkpoint())?;
        }
        Ok(())
    }
}

fn open_metrics(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    let f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = std::io::BufWriter::new(f);
    if fresh {
        writeln!(w, "{METRICS_HEADER}")?;
    }
    Ok(w)
}

#[cfg(test)]
mod tests;
