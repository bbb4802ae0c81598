//! End-to-end architectures: the Neural GPU baseline, the Markovian and
//! Extended Neural GPUs, and the attention baseline.
//!
//! Positions are 0-based throughout. Output `k` of the Extended model is
//! read from `d_{k+1}` at column `k`, and the tape column `k` holds the
//! embedding of output `k` once it has been emitted (or forced).

pub mod attention;
mod config;

pub use attention::{AttentionVars, GruVars};
pub use config::{ModelConfig, Precision, Variant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BoundParams, Eager, Graph, ParameterStore};
use crate::error::{Error, Result};
use crate::nn::{dropout_mask, embed_input, CgruCell, CgruVars, DcgruCell, DcgruVars, EmbeddingTable, OutputProjection};
use crate::tensor::{Real, Tensor};

/// A configuration plus its trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParameterStore<T>,
}

impl<T: Real> Model<T> {
    /// Deterministic initialization from a seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let ModelConfig {
            variant,
            layers,
            channels: m,
            kernel_w: kw,
            kernel_h: kh,
            vocab_in,
            vocab_out,
            ..
        } = config;
        store.insert("embed.in", EmbeddingTable::init(vocab_in, m, &mut rng).table)?;
        if variant == Variant::Attention {
            attention::init_attention(&mut store, m, &mut rng)?;
            store.insert("embed.out", EmbeddingTable::init(vocab_out + 1, m, &mut rng).table)?;
            store.insert("out.proj", OutputProjection::init(vocab_out, 2 * m, &mut rng).matrix)?;
        } else {
            for i in 0..layers {
                CgruCell::init(kw, kh, m, &mut rng)?.insert_into(&mut store, &format!("enc.{i}"))?;
            }
            match variant {
                Variant::Baseline => {
                    store.insert("out.proj", OutputProjection::init(vocab_out, m, &mut rng).matrix)?;
                }
                Variant::Markovian => {
                    store.insert("embed.out", EmbeddingTable::init(vocab_out + 1, m, &mut rng).table)?;
                    store.insert("out.proj", OutputProjection::init(vocab_out, 2 * m, &mut rng).matrix)?;
                }
                Variant::Extended => {
                    for i in 0..layers {
                        DcgruCell::init(kw, kh, m, &mut rng)?.insert_into(&mut store, &format!("dec.{i}"))?;
                    }
                    store.insert("embed.out", EmbeddingTable::init(vocab_out, m, &mut rng).table)?;
                    store.insert("out.proj", OutputProjection::init(vocab_out, m, &mut rng).matrix)?;
                }
                Variant::Attention => unreachable!(),
            }
        }
        Ok(Model { config, params: store })
    }

    /// Same layout as [`Model::init`] with every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        model.params = model.params.zeros_like();
        Ok(model)
    }

    /// Teacher-forced logits `[n, V_out]` and mean loss via value-only
    /// evaluation.
    pub fn evaluate(&self, tokens: &[usize], targets: &[usize]) -> Result<(Tensor<T>, f64)> {
        let mut g = Eager;
        let vars = ModelVars::bind(&self.config, &self.params.bind(&mut g))?;
        let n = memory_len(&self.config, tokens, targets);
        let out = forward(&self.config, &mut g, &vars, tokens, targets, n, None)?;
        let loss = out.mean_loss(&g);
        Ok(((*out.logits).clone(), loss))
    }

    /// Final encoder state `s_n` for memory-sized variants.
    pub fn encode(&self, tokens: &[usize], n: usize) -> Result<Tensor<T>> {
        let mut g = Eager;
        let vars = ModelVars::bind(&self.config, &self.params.bind(&mut g))?;
        Ok((*encode(&self.config, &mut g, &vars, tokens, n, None)?).clone())
    }
}

/// Memory length for a single example: enough for input and targets.
pub fn memory_len(config: &ModelConfig, tokens: &[usize], targets: &[usize]) -> usize {
    if config.variant.memory_sized() {
        tokens.len().max(targets.len()).max(1)
    } else {
        targets.len().max(1)
    }
}

/// Graph handles of every parameter, resolved once per bind.
#[derive(Debug, Clone)]
pub struct ModelVars<V> {
    pub embed_in: V,
    pub embed_out: Option<V>,
    pub out_proj: V,
    pub encoder: Vec<CgruVars<V>>,
    pub decoder: Vec<DcgruVars<V>>,
    pub attention: Option<AttentionVars<V>>,
}

impl<V: Clone> ModelVars<V> {
    pub fn bind(config: &ModelConfig, params: &BoundParams<V>) -> Result<Self> {
        let variant = config.variant;
        let encoder = if variant == Variant::Attention {
            Vec::new()
        } else {
            (0..config.layers)
                .map(|i| CgruVars::bind(params, &format!("enc.{i}")))
                .collect::<Result<_>>()?
        };
        let decoder = if variant == Variant::Extended {
            (0..config.layers)
                .map(|i| DcgruVars::bind(params, &format!("dec.{i}")))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(ModelVars {
            embed_in: params.get("embed.in")?,
            embed_out: match variant {
                Variant::Baseline => None,
                _ => Some(params.get("embed.out")?),
            },
            out_proj: params.get("out.proj")?,
            encoder,
            decoder,
            attention: match variant {
                Variant::Attention => Some(AttentionVars::bind(params)?),
                _ => None,
            },
        })
    }

    fn embed_out(&self) -> Result<&V> {
        self.embed_out
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("variant has no output embedding".into()))
    }
}

/// Training-time dropout on candidate activations.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask<T: Real>(&mut self, shape: &[usize]) -> Result<Option<Tensor<T>>> {
        if self.rate == 0.0 {
            return Ok(None);
        }
        dropout_mask(shape, self.rate, self.rng).map(Some)
    }
}

fn mask_for<T: Real>(dropout: &mut Option<&mut Dropout<'_>>, shape: &[usize]) -> Result<Option<Tensor<T>>> {
    match dropout {
        Some(d) => d.mask(shape),
        None => Ok(None),
    }
}

fn check_tokens(tokens: &[usize], vocab: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t >= vocab) {
        Some(&id) => Err(Error::Token { id, vocab }),
        None => Ok(()),
    }
}

/// `s_0` from the input, then `n` rounds of the `l` stacked CGRUs.
pub fn encode<T: Real, G: Graph<T>>(
    config: &ModelConfig,
    g: &mut G,
    vars: &ModelVars<G::V>,
    tokens: &[usize],
    n: usize,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<G::V> {
    if tokens.is_empty() {
        return Err(Error::Empty("input tokens"));
    }
    check_tokens(tokens, config.vocab_in)?;
    let mut s = embed_input(g, &vars.embed_in, tokens, config.width, n)?;
    let shape = [config.width, n, config.channels];
    for _ in 0..n {
        for cell in &vars.encoder {
            let mask = mask_for(&mut dropout, &shape)?;
            s = cell.step(g, &s, mask)?;
        }
    }
    Ok(s)
}

/// Incremental decoding state; one step produces logits for the next
/// position, then the chosen (or forced) symbol is fed back.
#[derive(Debug, Clone)]
pub enum DecoderState<V> {
    /// Baseline: logits depend on the final encoder state only.
    Independent { memory: V },
    /// Markovian: final state plus previous symbol.
    Markov { memory: V, prev: usize },
    /// Extended: decoder memory `d` and output tape `p`.
    Tape { memory: V, tape: V },
    /// Attention: encoder outputs, decoder hidden state, previous symbol.
    Attention { memory: V, hidden: V, prev: usize },
}

/// Builds the decoder state for an input and memory length `n`.
pub fn start<T: Real, G: Graph<T>>(
    config: &ModelConfig,
    g: &mut G,
    vars: &ModelVars<G::V>,
    tokens: &[usize],
    n: usize,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<DecoderState<G::V>> {
    if config.variant.memory_sized() && tokens.len() > n {
        return Err(Error::InvalidArgument(format!(
            "memory length {n} is shorter than the input ({})",
            tokens.len()
        )));
    }
    Ok(match config.variant {
        Variant::Baseline => DecoderState::Independent {
            memory: encode(config, g, vars, tokens, n, dropout)?,
        },
        Variant::Markovian => DecoderState::Markov {
            memory: encode(config, g, vars, tokens, n, dropout)?,
            prev: config.go_symbol(),
        },
        Variant::Extended => {
            let memory = encode(config, g, vars, tokens, n, dropout)?;
            let tape = g.constant(Tensor::zeros(&[config.width, n, config.channels]));
            DecoderState::Tape { memory, tape }
        }
        Variant::Attention => {
            if tokens.is_empty() {
                return Err(Error::Empty("input tokens"));
            }
            check_tokens(tokens, config.vocab_in)?;
            let att = vars.attention.as_ref().expect("bound attention");
            let m = config.channels;
            let mut hidden = g.constant(Tensor::zeros(&[m]));
            let mut rows = Vec::with_capacity(tokens.len());
            for &t in tokens {
                let x = g.gather(&vars.embed_in, &[t])?;
                let x = g.reshape(&x, &[m])?;
                let mask = mask_for(&mut dropout, &[m])?;
                hidden = att.encoder.step(g, &x, &hidden, mask)?;
                rows.push(hidden.clone());
            }
            let memory = g.stack(&rows)?;
            DecoderState::Attention {
                memory,
                hidden,
                prev: config.go_symbol(),
            }
        }
    })
}

/// Logits `[V_out]` for position `k`; advances recurrent state.
pub fn step_logits<T: Real, G: Graph<T>>(
    config: &ModelConfig,
    g: &mut G,
    vars: &ModelVars<G::V>,
    state: &mut DecoderState<G::V>,
    k: usize,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<G::V> {
    match state {
        DecoderState::Independent { memory } => {
            let col = g.column(memory, k)?;
            g.linear(&col, &vars.out_proj)
        }
        DecoderState::Markov { memory, prev } => {
            let col = g.column(memory, k)?;
            let e = g.gather(vars.embed_out()?, &[*prev])?;
            let e = g.reshape(&e, &[config.channels])?;
            let x = g.concat_last(&col, &e)?;
            g.linear(&x, &vars.out_proj)
        }
        DecoderState::Tape { memory, tape } => {
            let shape = [config.width, g.value(memory).shape()[1], config.channels];
            let mut d = memory.clone();
            for cell in &vars.decoder {
                let mask = mask_for(&mut dropout, &shape)?;
                d = cell.step(g, &d, tape, mask)?;
            }
            *memory = d;
            let col = g.column(memory, k)?;
            g.linear(&col, &vars.out_proj)
        }
        DecoderState::Attention { memory, hidden, prev } => {
            let att = vars.attention.as_ref().expect("bound attention");
            let m = config.channels;
            let e = g.gather(vars.embed_out()?, &[*prev])?;
            let e = g.reshape(&e, &[m])?;
            let mask = mask_for(&mut dropout, &[m])?;
            *hidden = att.decoder.step(g, &e, hidden, mask)?;
            let (_, ctx) = att.attend(g, memory, hidden)?;
            let x = g.concat_last(hidden, &ctx)?;
            g.linear(&x, &vars.out_proj)
        }
    }
}

/// Feeds output symbol `symbol` at position `k` back into the state.
pub fn feed<T: Real, G: Graph<T>>(
    config: &ModelConfig,
    g: &mut G,
    vars: &ModelVars<G::V>,
    state: &mut DecoderState<G::V>,
    k: usize,
    symbol: usize,
) -> Result<()> {
    if symbol >= config.vocab_out {
        return Err(Error::Token {
            id: symbol,
            vocab: config.vocab_out,
        });
    }
    match state {
        DecoderState::Independent { .. } => {}
        DecoderState::Markov { prev, .. } | DecoderState::Attention { prev, .. } => *prev = symbol,
        DecoderState::Tape { tape, .. } => {
            let e = g.gather(vars.embed_out()?, &[symbol])?;
            let e = g.reshape(&e, &[config.channels])?;
            *tape = g.write_column(tape, k, &e)?;
        }
    }
    Ok(())
}

/// Output of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct Forward<V> {
    /// `[n, V_out]`
    pub logits: V,
    /// Summed negative log-likelihood over unmasked positions.
    pub nll_sum: V,
    pub count: usize,
}

impl<V> Forward<V> {
    pub fn mean_loss<T: Real, G: Graph<T, V = V>>(&self, g: &G) -> f64 {
        g.value(&self.nll_sum).item().to_f64() / self.count.max(1) as f64
    }
}

/// Teacher-forced pass: the ground-truth previous symbol feeds the Markov
/// input, the output tape and the attention decoder. Positions at or past
/// `targets.len()` are excluded from the loss.
pub fn forward<T: Real, G: Graph<T>>(
    config: &ModelConfig,
    g: &mut G,
    vars: &ModelVars<G::V>,
    tokens: &[usize],
    targets: &[usize],
    n: usize,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Forward<G::V>> {
    if targets.len() > n {
        return Err(Error::InvalidArgument(format!(
            "{} targets exceed memory length {n}",
            targets.len()
        )));
    }
    check_tokens(targets, config.vocab_out)?;
    let mut state = start(config, g, vars, tokens, n, dropout.as_deref_mut())?;
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        rows.push(step_logits(config, g, vars, &mut state, k, dropout.as_deref_mut())?);
        if let Some(&t) = targets.get(k) {
            feed(config, g, vars, &mut state, k, t)?;
        }
    }
    let logits = g.stack(&rows)?;
    let mask: Vec<Option<usize>> = (0..n).map(|k| targets.get(k).copied()).collect();
    let nll_sum = g.cross_entropy(&logits, &mask)?;
    Ok(Forward {
        logits,
        nll_sum,
        count: targets.len(),
    })
}

/// Random small perturbation helper for tests and checks.
pub fn perturb<T: Real>(store: &mut ParameterStore<T>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in store.iter_mut() {
        for x in t.data_mut() {
            *x += T::from_f64(rng.gen_range(-scale..=scale));
        }
    }
}
