//! The `neural-gpu` command line: `datagen`, `train`, `eval`, `gradcheck`
//! and `decode`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numeric
//! failure (NaN, divergence, failed gradient check), 3 integrity error
//! (checksum, version or fingerprint mismatch).

mod config;

pub use config::{ExperimentConfig, KEYS};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::autograd::OpKind;
use crate::checks::{run_checks, CheckOptions, Component};
use crate::decode::{bleu, decode_sample, length_bucket_report, Decoder, Strategy};
use crate::error::{Error, Result};
use crate::models::{memory_len, Precision};
use crate::tasks::{read_dataset, write_dataset, TaskSample};
use crate::tensor::Real;
use crate::train::{batch_memory_len, evaluate_sample, load_checkpoint, EvalStats, RunOutputs, Trainer};

#[derive(Debug, Parser)]
#[command(name = "neural-gpu", version, about = "Active-memory sequence models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset file.
    Datagen(DatagenArgs),
    /// Train a model; writes metrics, checkpoint and manifest to the run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset file.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Decode input sequences with a checkpoint.
    Decode(DecodeArgs),
}

/// Flags mirroring the experiment config keys.
#[derive(Debug, Default, Args)]
struct ConfigArgs {
    /// `key=value` config file (`#` starts a comment).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    alphabet: Option<String>,
    #[arg(long)]
    min_len: Option<String>,
    #[arg(long)]
    max_len: Option<String>,
    #[arg(long)]
    eos: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    kernel_w: Option<String>,
    #[arg(long)]
    kernel_h: Option<String>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    curriculum: Option<String>,
    #[arg(long)]
    curriculum_start: Option<String>,
    #[arg(long)]
    curriculum_threshold: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
    #[arg(long)]
    wall_clock: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl ConfigArgs {
    fn flags(&self) -> [(&'static str, &Option<String>); 27] {
        [
            ("variant", &self.variant),
            ("task", &self.task),
            ("alphabet", &self.alphabet),
            ("min_len", &self.min_len),
            ("max_len", &self.max_len),
            ("eos", &self.eos),
            ("layers", &self.layers),
            ("width", &self.width),
            ("channels", &self.channels),
            ("kernel_w", &self.kernel_w),
            ("kernel_h", &self.kernel_h),
            ("precision", &self.precision),
            ("dropout", &self.dropout),
            ("lr", &self.lr),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("epsilon", &self.epsilon),
            ("clip", &self.clip),
            ("batch", &self.batch),
            ("steps", &self.steps),
            ("seed", &self.seed),
            ("curriculum", &self.curriculum),
            ("curriculum_start", &self.curriculum_start),
            ("curriculum_threshold", &self.curriculum_threshold),
            ("checkpoint_every", &self.checkpoint_every),
            ("wall_clock", &self.wall_clock),
            ("out_dir", &self.out_dir),
        ]
    }

    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        for (key, value) in self.flags() {
            if let Some(v) = value {
                c.set(key, v)?;
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct DatagenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of samples.
    #[arg(long)]
    count: usize,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    resume: bool,
    /// Print a progress line every this many steps (0: never).
    #[arg(long, default_value_t = 0)]
    log_every: u64,
}

#[derive(Debug, Args)]
struct DecodeFlags {
    /// Greedy decoding at a fixed length (the default).
    #[arg(long, conflicts_with_all = ["beam", "length_search"])]
    greedy: bool,
    /// Beam search of this width at a fixed length.
    #[arg(long, conflicts_with = "length_search")]
    beam: Option<usize>,
    /// Try every output length from |input| to 2·|input|.
    #[arg(long)]
    length_search: bool,
}

impl DecodeFlags {
    fn strategy(&self) -> Result<Strategy> {
        Ok(match (self.beam, self.length_search) {
            (Some(0), _) => return Err(Error::Config("--beam must be >= 1".into())),
            (Some(b), _) => Strategy::Beam(b),
            (None, true) => Strategy::LengthSearch,
            (None, false) => Strategy::Greedy,
        })
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint file (default: `<out_dir>/checkpoint.bin`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset file in the datagen format.
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
    /// Also report corpus BLEU of the decoded outputs.
    #[arg(long)]
    bleu: bool,
    /// Write a per-length-bucket CSV (width 10, by input length).
    #[arg(long)]
    buckets: Option<PathBuf>,
    /// Write `x,y` plot data: bucket upper bound vs. the bucket metric.
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
    /// Report file (default: standard output).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Comma-separated subset of primitives,cells,models; empty runs nothing.
    #[arg(long, default_value = "primitives,cells,models")]
    components: String,
    /// Channel count for cell and model checks.
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Memory length for model checks.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Corrupt the backward rule of this op (checker self-test).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// One input per line as space-separated ids (anything after a tab is ignored).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
    /// Fixed output length (default: the input length).
    #[arg(long)]
    out_len: Option<usize>,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::Divergence { .. } => 2,
        Error::Checksum { .. } | Error::Version { .. } | Error::Fingerprint { .. } | Error::Format { .. } => 3,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Datagen(a) => datagen(&a).map(|_| 0),
        Command::Train(a) => {
            let cfg = a.config.resolve()?;
            match cfg.precision {
                Precision::F32 => train::<f32>(&cfg, &a),
                Precision::F64 => train::<f64>(&cfg, &a),
            }
            .map(|_| 0)
        }
        Command::Eval(a) => {
            let cfg = a.config.resolve()?;
            match cfg.precision {
                Precision::F32 => eval::<f32>(&cfg, &a),
                Precision::F64 => eval::<f64>(&cfg, &a),
            }
            .map(|_| 0)
        }
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Decode(a) => {
            let cfg = a.config.resolve()?;
            match cfg.precision {
                Precision::F32 => decode::<f32>(&cfg, &a),
                Precision::F64 => decode::<f64>(&cfg, &a),
            }
            .map(|_| 0)
        }
    }
}

fn datagen(a: &DatagenArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let spec = cfg.task_spec()?;
    let samples = spec.samples(cfg.seed, a.count);
    let header = format!("{} seed={} count={}", spec.canonical(), cfg.seed, a.count);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_dataset(&a.out, &header, &samples)
}

/// Rewrites `<dir>/manifest.txt`: one `file<TAB>bytes<TAB>sha256` line per
/// regular file, sorted by name.
pub fn write_manifest(dir: &Path) -> Result<()> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.txt" && !n.ends_with(".tmp"))
        .collect();
    names.sort();
    let mut s = String::new();
    for n in names {
        let bytes = fs::read(dir.join(&n))?;
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(s, "{n}\t{}\t{digest}", bytes.len());
    }
    fs::write(dir.join("manifest.txt"), s)?;
    Ok(())
}

fn train<T: Real>(cfg: &ExperimentConfig, a: &TrainArgs) -> Result<()> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let ckpt_path = dir.join("checkpoint.bin");
    let metrics = dir.join("metrics.csv");
    let model_config = cfg.model_config()?;
    let train_config = cfg.train_config()?;
    let mut trainer = if a.resume {
        let ckpt = load_checkpoint::<T>(&ckpt_path, Some(&model_config))?;
        Trainer::resume(ckpt, train_config)?
    } else {
        if metrics.exists() {
            fs::remove_file(&metrics)?;
        }
        Trainer::new(model_config, train_config)?
    };
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    let outputs = RunOutputs {
        metrics: Some(metrics),
        checkpoint: Some(ckpt_path),
    };
    let every = a.log_every;
    let result = trainer.run(&outputs, |r| {
        if every > 0 && r.step % every == 0 {
            eprintln!(
                "step {} loss {:.5} acc {:.4} seq {:.4} len {}",
                r.step, r.loss, r.per_symbol_acc, r.seq_acc, r.curriculum_len
            );
        }
    });
    write_manifest(dir)?;
    result
}

fn load_for<T: Real>(cfg: &ExperimentConfig, path: Option<&PathBuf>) -> Result<crate::models::Model<T>> {
    let default = cfg.out_dir.join("checkpoint.bin");
    let path = path.unwrap_or(&default);
    Ok(load_checkpoint::<T>(path, Some(&cfg.model_config()?))?.model)
}

fn eval<T: Real>(cfg: &ExperimentConfig, a: &EvalArgs) -> Result<()> {
    let model = load_for::<T>(cfg, a.checkpoint.as_ref())?;
    let spec = cfg.task_spec()?;
    let eos = spec.eos_id();
    let data = read_dataset(&a.dataset)?;
    if data.samples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let strategy = a.decode.strategy()?;
    let dec = Decoder::new(&model, eos)?;
    let n = batch_memory_len(&model.config, &data.samples);
    let rows = crate::exec::map_ordered(&data.samples, |_, s| -> Result<(TaskSample, Vec<usize>, crate::train::SampleStats)> {
        let tf = evaluate_sample(&model, s, Some(n))?;
        let out = decode_sample(&dec, s, strategy, Some(n))?;
        Ok((s.clone(), out.tokens, tf))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut tf = EvalStats::default();
    for (_, _, st) in &rows {
        tf.add(st);
    }
    let reference = |s: &TaskSample| crate::decode::strip_eos(&s.target, eos).to_vec();
    let exact = |rows: &[&(TaskSample, Vec<usize>, crate::train::SampleStats)]| {
        rows.iter().filter(|(s, out, _)| *out == reference(s)).count() as f64 / rows.len().max(1) as f64
    };
    let all: Vec<&_> = rows.iter().collect();
    let mut report = String::from("metric,value\n");
    let _ = writeln!(report, "samples,{}", rows.len());
    let _ = writeln!(report, "log_perplexity,{}", tf.log_perplexity());
    let _ = writeln!(report, "perplexity,{}", tf.perplexity());
    let _ = writeln!(report, "per_symbol_acc,{}", tf.per_symbol_accuracy());
    let _ = writeln!(report, "seq_acc,{}", tf.sequence_accuracy());
    let _ = writeln!(report, "decoded_seq_acc,{}", exact(&all));
    let corpus_bleu = |rows: &[&(TaskSample, Vec<usize>, crate::train::SampleStats)]| -> f64 {
        let cands: Vec<Vec<usize>> = rows.iter().map(|r| r.1.clone()).collect();
        let refs: Vec<Vec<usize>> = rows.iter().map(|r| reference(&r.0)).collect();
        bleu(&cands, &refs).unwrap_or(0.0)
    };
    if a.bleu {
        let _ = writeln!(report, "bleu,{}", corpus_bleu(&all));
    }
    if a.buckets.is_some() || a.emit_plot_data.is_some() {
        let metric = |g: &[&(TaskSample, Vec<usize>, crate::train::SampleStats)]| {
            if a.bleu {
                corpus_bleu(g)
            } else {
                exact(g)
            }
        };
        let rep = length_bucket_report(&rows, 10, |r| r.0.input.len(), metric);
        if let Some(p) = &a.buckets {
            fs::write(p, rep.to_csv())?;
        }
        if let Some(p) = &a.emit_plot_data {
            fs::write(p, rep.plot_data())?;
        }
    }
    match &a.report {
        Some(p) => fs::write(p, report)?,
        None => print!("{report}"),
    }
    Ok(())
}

fn parse_inputs(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.split('\t')
                .next()
                .unwrap_or("")
                .split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| Error::Format {
                        what: "decode input",
                        detail: format!("line {}: bad token {t:?}", i + 1),
                    })
                })
                .collect()
        })
        .collect()
}

fn decode<T: Real>(cfg: &ExperimentConfig, a: &DecodeArgs) -> Result<()> {
    let model = load_for::<T>(cfg, a.checkpoint.as_ref())?;
    let eos = cfg.task_spec()?.eos_id();
    let strategy = a.decode.strategy()?;
    let dec = Decoder::new(&model, eos)?;
    let inputs = parse_inputs(&a.input)?;
    let results = crate::exec::map_ordered(&inputs, |_, input| {
        let n = a.out_len.unwrap_or_else(|| memory_len(&model.config, input, input));
        match strategy {
            Strategy::Greedy => dec.greedy(input, n),
            Strategy::Beam(b) => dec.beam(input, n, b),
            Strategy::LengthSearch => dec.length_search(input),
        }
    });
    let mut out = String::new();
    for r in results {
        let r = r?;
        let toks: Vec<String> = r.tokens.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{}\t{}\t{}", toks.join(" "), r.log_prob, r.length);
    }
    match &a.out {
        Some(p) => fs::write(p, out)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(out.as_bytes())?;
        }
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let components = a
        .components
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Component>>>()?;
    let fault = match &a.inject_fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| Error::Config(format!("unknown op {name:?}")))?),
        None => None,
    };
    let opts = CheckOptions {
        channels: a.channels,
        n: a.n,
        seed: a.seed,
        fault,
    };
    let results = run_checks(&components, &opts)?;
    for r in &results {
        println!("{}", r.line());
    }
    Ok(if results.iter().all(|r| r.passed) { 0 } else { 2 })
}

#[cfg(test)]
mod tests;
