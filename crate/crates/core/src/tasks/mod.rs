//! Synthetic tasks and the spell-out vocabulary.
//!
//! Every sample is a pure function of `(spec, seed, index)`: the generator
//! seeds a ChaCha stream with `seed` and selects stream `index`.

mod dataset;
mod vocab;

pub use dataset::{read_dataset, write_dataset, Dataset};
pub use vocab::{build_vocab, Entry, Vocabulary};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSample {
    pub input: Vec<usize>,
    /// Includes the trailing EOS when the task emits one.
    pub target: Vec<usize>,
    /// Hidden random choice behind the target (the mask for masked copy).
    pub latent: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Copy,
    Reverse,
    Addition,
    MaskedCopy { period: usize },
}

impl TaskKind {
    pub fn name(self) -> String {
        match self {
            TaskKind::Copy => "copy".into(),
            TaskKind::Reverse => "reverse".into(),
            TaskKind::Addition => "addition".into(),
            TaskKind::MaskedCopy { period } => format!("masked-copy-{period}"),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "copy" => TaskKind::Copy,
            "reverse" => TaskKind::Reverse,
            "addition" => TaskKind::Addition,
            _ => match s.strip_prefix("masked-copy-").map(str::parse) {
                Some(Ok(period)) if period >= 1 => TaskKind::MaskedCopy { period },
                _ => return Err(Error::Config(format!("unknown task {s:?}"))),
            },
        })
    }
}

/// A task family plus its length range.
///
/// For addition, lengths count operand digits; `alphabet` is the base.
/// Masked copy always uses the binary alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub alphabet: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Append EOS (id `alphabet`) to every target.
    pub eos: bool,
}

impl TaskSpec {
    pub fn copy(alphabet: usize, max_len: usize) -> Self {
        TaskSpec {
            kind: TaskKind::Copy,
            alphabet,
            min_len: 1,
            max_len,
            eos: false,
        }
    }

    pub fn reverse(alphabet: usize, max_len: usize) -> Self {
        TaskSpec {
            kind: TaskKind::Reverse,
            ..Self::copy(alphabet, max_len)
        }
    }

    pub fn addition(base: usize, max_digits: usize) -> Self {
        TaskSpec {
            kind: TaskKind::Addition,
            alphabet: base,
            min_len: 1,
            max_len: max_digits,
            eos: true,
        }
    }

    /// Fixed length `n`, no EOS: the setting with closed-form optima.
    pub fn masked_copy(period: usize, n: usize) -> Self {
        TaskSpec {
            kind: TaskKind::MaskedCopy { period },
            alphabet: 2,
            min_len: n,
            max_len: n,
            eos: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        match self.kind {
            TaskKind::Addition if !(2..=36).contains(&self.alphabet) => bad(format!("unsupported base {}", self.alphabet)),
            TaskKind::MaskedCopy { period } if period == 0 || self.alphabet != 2 => {
                bad("masked copy needs period >= 1 and a binary alphabet".into())
            }
            _ if self.alphabet == 0 => bad("empty alphabet".into()),
            _ => Ok(()),
        }
    }

    pub fn vocab_in(&self) -> usize {
        match self.kind {
            TaskKind::Addition => self.alphabet + 1,
            _ => self.alphabet,
        }
    }

    pub fn vocab_out(&self) -> usize {
        self.alphabet + usize::from(self.eos)
    }

    pub fn eos_id(&self) -> Option<usize> {
        self.eos.then_some(self.alphabet)
    }

    /// Longest input and target (with EOS) the spec can produce.
    pub fn max_input_len(&self) -> usize {
        match self.kind {
            TaskKind::Addition => 2 * self.max_len + 1,
            _ => self.max_len,
        }
    }

    pub fn with_max_len(self, max_len: usize) -> Self {
        TaskSpec {
            max_len,
            min_len: self.min_len.min(max_len),
            ..self
        }
    }

    /// Canonical `key=value` form, used in dataset headers.
    pub fn canonical(&self) -> String {
        format!(
            "task={} alphabet={} min_len={} max_len={} eos={}",
            self.kind, self.alphabet, self.min_len, self.max_len, self.eos
        )
    }

    /// Sample `index` of the stream identified by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> TaskSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let len = rng.gen_range(self.min_len..=self.max_len);
        let mut s = match self.kind {
            TaskKind::Copy => gen_copy(len, self.alphabet, &mut rng),
            TaskKind::Reverse => gen_reverse(len, self.alphabet, &mut rng),
            TaskKind::Addition => gen_addition(len, self.alphabet, &mut rng),
            TaskKind::MaskedCopy { period } => gen_masked_copy(MaskedCopySpec { period, len }, &mut rng),
        };
        if let Some(eos) = self.eos_id() {
            s.target.push(eos);
        }
        s
    }

    pub fn samples(&self, seed: u64, count: usize) -> Vec<TaskSample> {
        (0..count as u64).map(|i| self.sample(seed, i)).collect()
    }
}

fn random_tokens(len: usize, alphabet: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..alphabet)).collect()
}

pub fn gen_copy(len: usize, alphabet: usize, rng: &mut impl Rng) -> TaskSample {
    let input = random_tokens(len, alphabet, rng);
    TaskSample {
        target: input.clone(),
        input,
        latent: None,
    }
}

pub fn gen_reverse(len: usize, alphabet: usize, rng: &mut impl Rng) -> TaskSample {
    let input = random_tokens(len, alphabet, rng);
    TaskSample {
        target: input.iter().rev().copied().collect(),
        input,
        latent: None,
    }
}

/// Two zero-padded `digits`-digit operands, most significant digit first.
/// The `+` sign has id `base`.
/// Two `digits`-digit operands; only one-digit operands may be 0.
pub fn gen_addition(digits: usize, base: usize, rng: &mut impl Rng) -> TaskSample {
    let a = random_operand(digits, base, rng);
    let b = random_operand(digits, base, rng);
    addition_sample(&a, &b, base)
}

fn random_operand(digits: usize, base: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut d = random_tokens(digits, base, rng);
    if digits > 1 {
        d[0] = rng.gen_range(1..base);
    }
    d
}

/// Builds the sample for given operand digits (most significant first).
pub fn addition_sample(a: &[usize], b: &[usize], base: usize) -> TaskSample {
    let mut input = a.to_vec();
    input.push(base);
    input.extend_from_slice(b);
    TaskSample {
        input,
        target: add_digits(a, b, base),
        latent: None,
    }
}

/// Digit-wise sum without leading zeros.
pub fn add_digits(a: &[usize], b: &[usize], base: usize) -> Vec<usize> {
    let (mut i, mut j, mut carry) = (a.len(), b.len(), 0);
    let mut out = Vec::with_capacity(a.len().max(b.len()) + 1);
    while i > 0 || j > 0 || carry > 0 {
        let mut d = carry;
        if i > 0 {
            i -= 1;
            d += a[i];
        }
        if j > 0 {
            j -= 1;
            d += b[j];
        }
        out.push(d % base);
        carry = d / base;
    }
    while out.len() > 1 && out.last() == Some(&0) {
        out.pop();
    }
    if out.is_empty() {
        out.push(0);
    }
    out.reverse();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskedCopySpec {
    pub period: usize,
    pub len: usize,
}

/// `target_k = input_k XOR mask[k mod period]`, with uniform input and mask bits.
pub fn gen_masked_copy(spec: MaskedCopySpec, rng: &mut impl Rng) -> TaskSample {
    let input = random_tokens(spec.len, 2, rng);
    let mask = random_tokens(spec.period, 2, rng);
    let target = input.iter().enumerate().map(|(k, &x)| x ^ mask[k % spec.period]).collect();
    TaskSample {
        input,
        target,
        latent: Some(mask),
    }
}

/// Output-dependence class of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelClass {
    /// Outputs conditionally independent given the input.
    Independent,
    /// Each output also sees the previous output.
    Markov1,
    /// Each output sees all previous outputs.
    Full,
}

/// Per-symbol optimal log-perplexity (nats) for fixed-length masked copy.
pub fn optimal_log_perplexity(task: &TaskSpec, class: ModelClass, n: usize) -> Result<f64> {
    let TaskKind::MaskedCopy { period } = task.kind else {
        return Err(Error::InvalidArgument(format!("no closed-form optimum for {}", task.kind)));
    };
    if task.eos || n == 0 || !(1..=2).contains(&period) {
        return Err(Error::InvalidArgument(format!("no closed-form optimum for {}", task.canonical())));
    }
    let ln2 = std::f64::consts::LN_2;
    // Uncertain symbols: every one, the first `period`, or the first only
    // when the previous output pins the mask bit.
    let uncertain = match (class, period) {
        (ModelClass::Independent, _) => n,
        (ModelClass::Markov1, 1) => 1,
        (ModelClass::Markov1, _) => n,
        (ModelClass::Full, p) => p.min(n),
    };
    Ok(uncertain as f64 * ln2 / n as f64)
}
