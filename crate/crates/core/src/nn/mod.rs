//! Convolutional gated recurrent cells, the residual update, embeddings and
//! output projections.

use rand::Rng;

use crate::autograd::{BoundParams, Eager, Graph, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::{KernelBank, Real, Tensor};

/// Parameters of one CGRU: candidate (`U`, `B`), update gate (`U'`, `B'`)
/// and reset gate (`U''`, `B''`).
#[derive(Debug, Clone, PartialEq)]
pub struct CgruCell<T> {
    pub candidate: KernelBank<T>,
    pub update: KernelBank<T>,
    pub reset: KernelBank<T>,
    pub candidate_bias: Tensor<T>,
    pub update_bias: Tensor<T>,
    pub reset_bias: Tensor<T>,
}

/// A CGRU that also reads the output tape through `W`, `W'`, `W''`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcgruCell<T> {
    pub cell: CgruCell<T>,
    pub tape_candidate: KernelBank<T>,
    pub tape_update: KernelBank<T>,
    pub tape_reset: KernelBank<T>,
}

/// Kernel weights start uniform in `[-d, d]` with `d = 1/sqrt(k_w k_h m)`.
pub fn init_kernel<T: Real>(kw: usize, kh: usize, m: usize, rng: &mut impl Rng) -> Result<KernelBank<T>> {
    let bound = 1.0 / ((kw * kh * m) as f64).sqrt();
    let data = (0..kw * kh * m * m)
        .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
        .collect();
    KernelBank::new(Tensor::new(&[kw, kh, m, m], data)?)
}

pub(crate) fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("positive dims")
}

const CELL_PARTS: [&str; 6] = [
    "cand.kernel",
    "cand.bias",
    "update.kernel",
    "update.bias",
    "reset.kernel",
    "reset.bias",
];
const TAPE_PARTS: [&str; 3] = ["cand.tape", "update.tape", "reset.tape"];

impl<T: Real> CgruCell<T> {
    pub fn zeros(kw: usize, kh: usize, m: usize) -> Result<Self> {
        Ok(CgruCell {
            candidate: KernelBank::zeros(kw, kh, m)?,
            update: KernelBank::zeros(kw, kh, m)?,
            reset: KernelBank::zeros(kw, kh, m)?,
            candidate_bias: Tensor::zeros(&[m]),
            update_bias: Tensor::zeros(&[m]),
            reset_bias: Tensor::zeros(&[m]),
        })
    }

    /// Random kernels; zero biases except the update gate, which starts at
    /// +1 so the state is mostly carried over early in training.
    pub fn init(kw: usize, kh: usize, m: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(CgruCell {
            candidate: init_kernel(kw, kh, m, rng)?,
            update: init_kernel(kw, kh, m, rng)?,
            reset: init_kernel(kw, kh, m, rng)?,
            candidate_bias: Tensor::zeros(&[m]),
            update_bias: Tensor::ones(&[m]),
            reset_bias: Tensor::zeros(&[m]),
        })
    }

    pub fn channels(&self) -> usize {
        self.candidate.channels()
    }

    fn check(&self) -> Result<()> {
        let shape = self.candidate.tensor().shape();
        let m = shape[2];
        let banks_ok = [&self.update, &self.reset].iter().all(|b| b.tensor().shape() == shape);
        let bias_ok = [&self.candidate_bias, &self.update_bias, &self.reset_bias]
            .iter()
            .all(|b| b.shape() == [m]);
        if banks_ok && bias_ok {
            Ok(())
        } else {
            Err(Error::shape("cgru", "kernel banks or biases disagree in shape"))
        }
    }

    pub fn insert_into(self, store: &mut ParameterStore<T>, prefix: &str) -> Result<()> {
        self.check()?;
        let parts = [
            self.candidate.into_tensor(),
            self.candidate_bias,
            self.update.into_tensor(),
            self.update_bias,
            self.reset.into_tensor(),
            self.reset_bias,
        ];
        for (name, t) in CELL_PARTS.iter().zip(parts) {
            store.insert(format!("{prefix}.{name}"), t)?;
        }
        Ok(())
    }

    /// One CGRU step on a `[w, n, m]` state.
    pub fn step(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        let mut store = ParameterStore::new();
        self.clone().insert_into(&mut store, "c")?;
        let mut g = Eager;
        let vars = CgruVars::bind(&store.bind(&mut g), "c")?;
        let s = g.constant(s.clone());
        Ok((*vars.step(&mut g, &s, None)?).clone())
    }
}

impl<T: Real> DcgruCell<T> {
    pub fn zeros(kw: usize, kh: usize, m: usize) -> Result<Self> {
        Ok(DcgruCell {
            cell: CgruCell::zeros(kw, kh, m)?,
            tape_candidate: KernelBank::zeros(kw, kh, m)?,
            tape_update: KernelBank::zeros(kw, kh, m)?,
            tape_reset: KernelBank::zeros(kw, kh, m)?,
        })
    }

    pub fn init(kw: usize, kh: usize, m: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(DcgruCell {
            cell: CgruCell::init(kw, kh, m, rng)?,
            tape_candidate: init_kernel(kw, kh, m, rng)?,
            tape_update: init_kernel(kw, kh, m, rng)?,
            tape_reset: init_kernel(kw, kh, m, rng)?,
        })
    }

    pub fn insert_into(self, store: &mut ParameterStore<T>, prefix: &str) -> Result<()> {
        let shape = self.cell.candidate.tensor().shape().to_vec();
        let tapes = [self.tape_candidate, self.tape_update, self.tape_reset];
        if tapes.iter().any(|t| t.tensor().shape() != shape.as_slice()) {
            return Err(Error::shape("dcgru", "tape banks must match the state banks"));
        }
        self.cell.insert_into(store, prefix)?;
        for (name, t) in TAPE_PARTS.iter().zip(tapes) {
            store.insert(format!("{prefix}.{name}"), t.into_tensor())?;
        }
        Ok(())
    }

    /// One DCGRU step reading state `s` and output tape `p`.
    pub fn step(&self, s: &Tensor<T>, p: &Tensor<T>) -> Result<Tensor<T>> {
        let mut store = ParameterStore::new();
        self.clone().insert_into(&mut store, "d")?;
        let mut g = Eager;
        let vars = DcgruVars::bind(&store.bind(&mut g), "d")?;
        let s = g.constant(s.clone());
        let p = g.constant(p.clone());
        Ok((*vars.step(&mut g, &s, &p, None)?).clone())
    }
}

/// Graph handles of a CGRU's parameters.
#[derive(Debug, Clone)]
pub struct CgruVars<V> {
    pub candidate: V,
    pub candidate_bias: V,
    pub update: V,
    pub update_bias: V,
    pub reset: V,
    pub reset_bias: V,
}

/// Graph handles of a DCGRU's parameters.
#[derive(Debug, Clone)]
pub struct DcgruVars<V> {
    pub cell: CgruVars<V>,
    pub tape_candidate: V,
    pub tape_update: V,
    pub tape_reset: V,
}

impl<V: Clone> CgruVars<V> {
    pub fn bind(params: &BoundParams<V>, prefix: &str) -> Result<Self> {
        let get = |part: &str| params.get(&format!("{prefix}.{part}"));
        Ok(CgruVars {
            candidate: get(CELL_PARTS[0])?,
            candidate_bias: get(CELL_PARTS[1])?,
            update: get(CELL_PARTS[2])?,
            update_bias: get(CELL_PARTS[3])?,
            reset: get(CELL_PARTS[4])?,
            reset_bias: get(CELL_PARTS[5])?,
        })
    }

    /// `u*s + (1-u)*tanh(U*(r*s) + B)` with `u`, `r` the sigmoid gates.
    /// `dropout` multiplies the candidate activation.
    pub fn step<T: Real, G: Graph<T, V = V>>(&self, g: &mut G, s: &V, dropout: Option<Tensor<T>>) -> Result<V> {
        gated_step(g, self, s, None, dropout)
    }
}

impl<V: Clone> DcgruVars<V> {
    pub fn bind(params: &BoundParams<V>, prefix: &str) -> Result<Self> {
        let get = |part: &str| params.get(&format!("{prefix}.{part}"));
        Ok(DcgruVars {
            cell: CgruVars::bind(params, prefix)?,
            tape_candidate: get(TAPE_PARTS[0])?,
            tape_update: get(TAPE_PARTS[1])?,
            tape_reset: get(TAPE_PARTS[2])?,
        })
    }

    pub fn step<T: Real, G: Graph<T, V = V>>(
        &self,
        g: &mut G,
        s: &V,
        p: &V,
        dropout: Option<Tensor<T>>,
    ) -> Result<V> {
        gated_step(g, &self.cell, s, Some((self, p)), dropout)
    }
}

fn gated_step<T: Real, G: Graph<T>>(
    g: &mut G,
    cell: &CgruVars<G::V>,
    s: &G::V,
    tape: Option<(&DcgruVars<G::V>, &G::V)>,
    dropout: Option<Tensor<T>>,
) -> Result<G::V> {
    if let Some((_, p)) = tape {
        if g.value(s).shape() != g.value(p).shape() {
            return Err(Error::shape(
                "dcgru",
                format!("state {:?} vs tape {:?}", g.value(s).shape(), g.value(p).shape()),
            ));
        }
    }
    // pre-activation: kernel * input (+ tape kernel * p) + bias
    let preact = |g: &mut G, kernel: &G::V, input: &G::V, tape_kernel: Option<(&G::V, &G::V)>, bias: &G::V| {
        let mut x = g.conv(kernel, input)?;
        if let Some((w, p)) = tape_kernel {
            let wp = g.conv(w, p)?;
            x = g.add(&x, &wp)?;
        }
        g.add_bias(&x, bias)
    };
    let pick = |f: fn(&DcgruVars<G::V>) -> &G::V| tape.map(|(d, p)| (f(d), p));

    let u_pre = preact(g, &cell.update, s, pick(|d| &d.tape_update), &cell.update_bias)?;
    let u = g.sigmoid(&u_pre);
    let r_pre = preact(g, &cell.reset, s, pick(|d| &d.tape_reset), &cell.reset_bias)?;
    let r = g.sigmoid(&r_pre);
    let rs = g.mul(&r, s)?;
    let c_pre = preact(g, &cell.candidate, &rs, pick(|d| &d.tape_candidate), &cell.candidate_bias)?;
    let mut c = g.tanh(&c_pre);
    if let Some(mask) = dropout {
        c = g.mul_const(&c, mask)?;
    }
    let keep = g.mul(&u, s)?;
    let one_minus_u = g.one_minus(&u);
    let fresh = g.mul(&one_minus_u, &c)?;
    g.add(&keep, &fresh)
}

/// `s + U * s`
pub fn residual_step<T: Real, G: Graph<T>>(g: &mut G, kernel: &G::V, s: &G::V) -> Result<G::V> {
    let us = g.conv(kernel, s)?;
    g.add(s, &us)
}

/// Builds `s0` of shape `[width, len, m]` with `s0[0, k, :] = E[tokens[k]]`
/// and zeros everywhere else.
pub fn embed_input<T: Real, G: Graph<T>>(
    g: &mut G,
    table: &G::V,
    tokens: &[usize],
    width: usize,
    len: usize,
) -> Result<G::V> {
    if tokens.len() > len {
        return Err(Error::InvalidArgument(format!(
            "{} input tokens do not fit a memory of length {len}",
            tokens.len()
        )));
    }
    let rows = g.gather(table, tokens)?;
    g.place_first_row(&rows, width, len)
}

/// Scaled Bernoulli keep-mask: each entry is 0 with probability `rate`,
/// otherwise `1/(1-rate)`.
pub fn dropout_mask<T: Real>(shape: &[usize], rate: f64, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    Tensor::new(shape, data)
}

/// Inverted dropout; identity outside training or at rate 0.
pub fn dropout<T: Real>(x: &Tensor<T>, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    x.mul(&dropout_mask(x.shape(), rate, rng)?)
}

/// Token id to dense vector lookup, `[V, m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub table: Tensor<T>,
}

impl<T: Real> EmbeddingTable<T> {
    /// Entries uniform in `±sqrt(3/m)` (unit variance per row).
    pub fn init(vocab: usize, m: usize, rng: &mut impl Rng) -> Self {
        EmbeddingTable {
            table: uniform(&[vocab, m], (3.0 / m as f64).sqrt(), rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn lookup(&self, id: usize) -> Result<Tensor<T>> {
        let m = self.table.shape()[1];
        self.table.gather_rows(&[id])?.reshape(&[m])
    }

    /// Tensor-level `embed_input`.
    pub fn embed_input(&self, tokens: &[usize], width: usize, len: usize) -> Result<Tensor<T>> {
        let mut g = Eager;
        let table = g.constant(self.table.clone());
        Ok((*embed_input(&mut g, &table, tokens, width, len)?).clone())
    }
}

/// Output matrix `O` mapping a feature vector to vocabulary logits.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputProjection<T> {
    pub matrix: Tensor<T>,
}

impl<T: Real> OutputProjection<T> {
    pub fn init(vocab: usize, features: usize, rng: &mut impl Rng) -> Self {
        OutputProjection {
            matrix: uniform(&[vocab, features], 1.0 / (features as f64).sqrt(), rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn logits(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        features.linear(&self.matrix)
    }
}
