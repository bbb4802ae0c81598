//! Greedy, length-search and beam decoding, plus evaluation metrics.
//!
//! Argmax ties go to the lowest symbol id. Decoding stops after
//! `out_len` symbols or at EOS; EOS is scored but not part of the output.

mod bleu;
mod buckets;

pub use bleu::{bleu, ngram_stats, NgramStats};
pub use buckets::{length_bucket_report, Bucket, LengthBucketReport};

use crate::autograd::Eager;
use crate::error::{Error, Result};
use crate::models::{feed, start, step_logits, DecoderState, Model, ModelVars};
use crate::tasks::TaskSample;
use crate::tensor::{Real, Tensor};
use crate::train::{evaluate, EvalStats};

use std::cmp::Ordering;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Emitted symbols, without EOS.
    pub tokens: Vec<usize>,
    /// Sum of `per_position`.
    pub log_prob: f64,
    /// Memory length (candidate output length) the decode ran with.
    pub length: usize,
    /// Log-probability of each scored symbol, EOS included.
    pub per_position: Vec<f64>,
}

impl DecodeResult {
    /// Mean negative log-probability per scored symbol.
    pub fn log_perplexity(&self) -> f64 {
        -self.log_prob / self.per_position.len().max(1) as f64
    }
}

/// Decoding session over a frozen model.
pub struct Decoder<'a, T: Real> {
    model: &'a Model<T>,
    vars: ModelVars<Arc<Tensor<T>>>,
    eos: Option<usize>,
}

fn log_probs<T: Real>(logits: &Tensor<T>) -> Result<Vec<f64>> {
    Ok(logits.log_softmax()?.data().iter().map(|&x| Real::to_f64(x)).collect())
}

fn best_index(lp: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in lp.iter().enumerate() {
        if x > lp[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone)]
struct Hypothesis<V> {
    state: DecoderState<V>,
    tokens: Vec<usize>,
    per_position: Vec<f64>,
    score: f64,
    finished: bool,
}

impl<'a, T: Real> Decoder<'a, T> {
    /// `eos` is the output id that ends a sequence, if the task has one.
    pub fn new(model: &'a Model<T>, eos: Option<usize>) -> Result<Self> {
        let mut g = Eager;
        let vars = ModelVars::bind(&model.config, &model.params.bind(&mut g))?;
        if let Some(e) = eos {
            if e >= model.config.vocab_out {
                return Err(Error::Token {
                    id: e,
                    vocab: model.config.vocab_out,
                });
            }
        }
        Ok(Decoder { model, vars, eos })
    }

    fn start(&self, input: &[usize], out_len: usize) -> Result<DecoderState<Arc<Tensor<T>>>> {
        if out_len == 0 {
            return Err(Error::InvalidArgument("output length must be >= 1".into()));
        }
        start(&self.model.config, &mut Eager, &self.vars, input, out_len, None)
    }

    fn result(&self, h: Hypothesis<Arc<Tensor<T>>>, out_len: usize) -> DecodeResult {
        DecodeResult {
            log_prob: h.per_position.iter().sum(),
            tokens: h.tokens,
            length: out_len,
            per_position: h.per_position,
        }
    }

    /// Emits the most probable symbol at every step and feeds it back.
    pub fn greedy(&self, input: &[usize], out_len: usize) -> Result<DecodeResult> {
        let config = &self.model.config;
        let mut g = Eager;
        let mut state = self.start(input, out_len)?;
        let mut tokens = Vec::new();
        let mut per_position = Vec::new();
        for k in 0..out_len {
            let logits = step_logits(config, &mut g, &self.vars, &mut state, k, None)?;
            let lp = log_probs(&logits)?;
            let sym = best_index(&lp);
            per_position.push(lp[sym]);
            if Some(sym) == self.eos {
                break;
            }
            tokens.push(sym);
            feed(config, &mut g, &self.vars, &mut state, k, sym)?;
        }
        Ok(DecodeResult {
            log_prob: per_position.iter().sum(),
            tokens,
            length: out_len,
            per_position,
        })
    }

    /// Beam search without length normalization. Candidates are ranked by
    /// total score, then parent rank, then the step's log-probability,
    /// then symbol id, so `beam = 1` reproduces [`greedy`](Self::greedy).
    pub fn beam(&self, input: &[usize], out_len: usize, beam: usize) -> Result<DecodeResult> {
        if beam == 0 {
            return Err(Error::InvalidArgument("beam must be >= 1".into()));
        }
        let config = &self.model.config;
        let mut g = Eager;
        let mut hyps = vec![Hypothesis {
            state: self.start(input, out_len)?,
            tokens: Vec::new(),
            per_position: Vec::new(),
            score: 0.0,
            finished: false,
        }];
        for k in 0..out_len {
            if hyps.iter().all(|h| h.finished) {
                break;
            }
            // (score, parent rank, step log-prob, symbol); symbol None keeps
            // a finished hypothesis as it is.
            let mut cands: Vec<(f64, usize, f64, Option<usize>)> = Vec::new();
            let mut stepped = Vec::with_capacity(hyps.len());
            for (rank, h) in hyps.iter().enumerate() {
                if h.finished {
                    cands.push((h.score, rank, 0.0, None));
                    stepped.push((h.state.clone(), Vec::new()));
                    continue;
                }
                let mut state = h.state.clone();
                let logits = step_logits(config, &mut g, &self.vars, &mut state, k, None)?;
                let lp = log_probs(&logits)?;
                for (sym, &p) in lp.iter().enumerate() {
                    cands.push((h.score + p, rank, p, Some(sym)));
                }
                stepped.push((state, lp));
            }
            cands.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
                    .then(b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal))
                    .then(a.3.cmp(&b.3))
            });
            let mut next = Vec::with_capacity(beam);
            for (score, rank, p, sym) in cands.into_iter().take(beam) {
                let parent = &hyps[rank];
                let Some(sym) = sym else {
                    next.push(parent.clone());
                    continue;
                };
                let mut h = Hypothesis {
                    state: stepped[rank].0.clone(),
                    tokens: parent.tokens.clone(),
                    per_position: parent.per_position.clone(),
                    score,
                    finished: false,
                };
                h.per_position.push(p);
                if Some(sym) == self.eos {
                    h.finished = true;
                } else {
                    h.tokens.push(sym);
                    feed(config, &mut g, &self.vars, &mut h.state, k, sym)?;
                }
                next.push(h);
            }
            hyps = next;
        }
        // Already sorted best-first.
        let best = hyps.into_iter().next().expect("beam keeps at least one hypothesis");
        Ok(self.result(best, out_len))
    }

    /// Greedy decodes for every length in `lengths`, keeping the lowest
    /// per-symbol log-perplexity; ties go to the earlier (shorter) length.
    pub fn search_lengths(&self, input: &[usize], lengths: impl IntoIterator<Item = usize>) -> Result<DecodeResult> {
        let mut best: Option<DecodeResult> = None;
        for len in lengths {
            let r = self.greedy(input, len)?;
            if best.as_ref().is_none_or(|b| r.log_perplexity() < b.log_perplexity()) {
                best = Some(r);
            }
        }
        best.ok_or(Error::Empty("length range"))
    }

    /// Tries every output length from `|input|` to `2·|input|`.
    pub fn length_search(&self, input: &[usize]) -> Result<DecodeResult> {
        if input.is_empty() {
            return Err(Error::Empty("input"));
        }
        self.search_lengths(input, input.len()..=2 * input.len())
    }

    /// Log-probability of a given output under the model (EOS appended
    /// when the decoder has one and there is room).
    pub fn score(&self, input: &[usize], output: &[usize], out_len: usize) -> Result<f64> {
        let config = &self.model.config;
        let mut g = Eager;
        let mut state = self.start(input, out_len)?;
        let mut total = 0.0;
        let mut seq = output.to_vec();
        if let Some(e) = self.eos {
            if seq.len() < out_len {
                seq.push(e);
            }
        }
        for (k, &sym) in seq.iter().enumerate().take(out_len) {
            let logits = step_logits(config, &mut g, &self.vars, &mut state, k, None)?;
            total += log_probs(&logits)?[sym];
            feed(config, &mut g, &self.vars, &mut state, k, sym)?;
        }
        Ok(total)
    }
}

pub fn greedy_decode<T: Real>(model: &Model<T>, input: &[usize], out_len: usize, eos: Option<usize>) -> Result<DecodeResult> {
    Decoder::new(model, eos)?.greedy(input, out_len)
}

pub fn beam_decode<T: Real>(
    model: &Model<T>,
    input: &[usize],
    out_len: usize,
    beam: usize,
    eos: Option<usize>,
) -> Result<DecodeResult> {
    Decoder::new(model, eos)?.beam(input, out_len, beam)
}

pub fn length_search<T: Real>(model: &Model<T>, input: &[usize], eos: Option<usize>) -> Result<DecodeResult> {
    Decoder::new(model, eos)?.length_search(input)
}

/// Teacher-forced per-symbol perplexity and its logarithm. Never decodes.
pub fn per_word_perplexity<T: Real>(model: &Model<T>, samples: &[TaskSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let stats: EvalStats = evaluate(model, samples)?;
    Ok((stats.perplexity(), stats.log_perplexity()))
}

/// Decoding strategy for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
    LengthSearch,
}

/// Target without a trailing EOS.
pub fn strip_eos(target: &[usize], eos: Option<usize>) -> &[usize] {
    match (eos, target.last()) {
        (Some(e), Some(&l)) if l == e => &target[..target.len() - 1],
        _ => target,
    }
}

/// Decodes one sample at memory length `n` (defaults to the sample's own
/// [`memory_len`](crate::models::memory_len)). Without EOS the output is
/// cut to the target length, since positions past it are padding. Length
/// search ignores both `n` and the target.
pub fn decode_sample<T: Real>(
    dec: &Decoder<'_, T>,
    sample: &TaskSample,
    strategy: Strategy,
    n: Option<usize>,
) -> Result<DecodeResult> {
    let n = n.unwrap_or_else(|| crate::models::memory_len(&dec.model.config, &sample.input, &sample.target));
    let mut r = match strategy {
        Strategy::Greedy => dec.greedy(&sample.input, n)?,
        Strategy::Beam(b) => dec.beam(&sample.input, n, b)?,
        Strategy::LengthSearch => return dec.length_search(&sample.input),
    };
    if dec.eos.is_none() {
        r.tokens.truncate(sample.target.len());
    }
    Ok(r)
}

/// Fraction of samples decoded exactly (and per-symbol accuracy against
/// the EOS-free target, counting missing or extra symbols as errors).
/// The set is decoded as one batch: every sample gets the batch memory
/// length used in training.
pub fn decode_accuracy<T: Real>(
    model: &Model<T>,
    samples: &[TaskSample],
    eos: Option<usize>,
    strategy: Strategy,
) -> Result<(f64, f64)> {
    let dec = Decoder::new(model, eos)?;
    let n = crate::train::batch_memory_len(&model.config, samples);
    let outs = crate::exec::map_ordered(samples, |_, s| decode_sample(&dec, s, strategy, Some(n)));
    let (mut seq, mut sym, mut total) = (0usize, 0usize, 0usize);
    for (s, r) in samples.iter().zip(outs) {
        let r = r?;
        let want = strip_eos(&s.target, eos);
        seq += usize::from(r.tokens == want);
        sym += want.iter().zip(&r.tokens).filter(|(a, b)| a == b).count();
        total += want.len().max(r.tokens.len());
    }
    Ok((seq as f64 / samples.len().max(1) as f64, sym as f64 / total.max(1) as f64))
}
