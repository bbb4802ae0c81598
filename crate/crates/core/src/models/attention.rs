//! Minimal GRU encoder-decoder with additive attention, used only as a
//! qualitative contrast to the active-memory models.

use rand::Rng;

use crate::autograd::{BoundParams, Graph, ParameterStore};
use crate::error::Result;
use crate::nn::uniform;
use crate::tensor::{Real, Tensor};

const GRU_PARTS: [&str; 9] = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"];

pub(crate) fn init_gru<T: Real>(store: &mut ParameterStore<T>, prefix: &str, h: usize, rng: &mut impl Rng) -> Result<()> {
    let bound = 1.0 / (h as f64).sqrt();
    for part in GRU_PARTS {
        let t = if part.starts_with('b') {
            if part == "bz" {
                Tensor::ones(&[h])
            } else {
                Tensor::zeros(&[h])
            }
        } else {
            uniform(&[h, h], bound, rng)
        };
        store.insert(format!("{prefix}.{part}"), t)?;
    }
    Ok(())
}

/// Vector GRU over `[h]` states; same gate convention as the CGRU
/// (`z*h + (1-z)*candidate`).
#[derive(Debug, Clone)]
pub struct GruVars<V> {
    wz: V,
    uz: V,
    bz: V,
    wr: V,
    ur: V,
    br: V,
    wh: V,
    uh: V,
    bh: V,
}

impl<V: Clone> GruVars<V> {
    pub fn bind(params: &BoundParams<V>, prefix: &str) -> Result<Self> {
        let get = |p: &str| params.get(&format!("{prefix}.{p}"));
        Ok(GruVars {
            wz: get("wz")?,
            uz: get("uz")?,
            bz: get("bz")?,
            wr: get("wr")?,
            ur: get("ur")?,
            br: get("br")?,
            wh: get("wh")?,
            uh: get("uh")?,
            bh: get("bh")?,
        })
    }

    pub fn step<T: Real, G: Graph<T, V = V>>(&self, g: &mut G, x: &V, h: &V, dropout: Option<Tensor<T>>) -> Result<V> {
        let gate = |g: &mut G, w: &V, u: &V, b: &V, hin: &V| -> Result<V> {
            let a = g.linear(x, w)?;
            let c = g.linear(hin, u)?;
            let s = g.add(&a, &c)?;
            g.add_bias(&s, b)
        };
        let z_pre = gate(g, &self.wz, &self.uz, &self.bz, h)?;
        let z = g.sigmoid(&z_pre);
        let r_pre = gate(g, &self.wr, &self.ur, &self.br, h)?;
        let r = g.sigmoid(&r_pre);
        let rh = g.mul(&r, h)?;
        let c_pre = gate(g, &self.wh, &self.uh, &self.bh, &rh)?;
        let mut c = g.tanh(&c_pre);
        if let Some(mask) = dropout {
            c = g.mul_const(&c, mask)?;
        }
        let keep = g.mul(&z, h)?;
        let one_minus = g.one_minus(&z);
        let fresh = g.mul(&one_minus, &c)?;
        g.add(&keep, &fresh)
    }
}

/// Additive scoring `v^T tanh(A s + C H_j)`.
#[derive(Debug, Clone)]
pub struct AttentionVars<V> {
    pub encoder: GruVars<V>,
    pub decoder: GruVars<V>,
    pub query: V,
    pub key: V,
    pub score: V,
}

impl<V: Clone> AttentionVars<V> {
    pub fn bind(params: &BoundParams<V>) -> Result<Self> {
        Ok(AttentionVars {
            encoder: GruVars::bind(params, "att.enc")?,
            decoder: GruVars::bind(params, "att.dec")?,
            query: params.get("att.query")?,
            key: params.get("att.key")?,
            score: params.get("att.score")?,
        })
    }

    /// Attention weights over memory rows `[n]` and the context vector `[h]`.
    pub fn attend<T: Real, G: Graph<T, V = V>>(&self, g: &mut G, memory: &V, state: &V) -> Result<(V, V)> {
        let n = g.value(memory).shape()[0];
        let keys = g.linear(memory, &self.key)?;
        let q = g.linear(state, &self.query)?;
        let mixed = g.add_bias(&keys, &q)?;
        let act = g.tanh(&mixed);
        let scores = g.linear(&act, &self.score)?;
        let scores = g.reshape(&scores, &[n])?;
        let weights = g.softmax(&scores)?;
        let row = g.reshape(&weights, &[1, n])?;
        let ctx = g.matmul(&row, memory)?;
        let h = g.value(&ctx).shape()[1];
        let ctx = g.reshape(&ctx, &[h])?;
        Ok((weights, ctx))
    }
}

pub(crate) fn init_attention<T: Real>(store: &mut ParameterStore<T>, h: usize, rng: &mut impl Rng) -> Result<()> {
    init_gru(store, "att.enc", h, rng)?;
    init_gru(store, "att.dec", h, rng)?;
    let bound = 1.0 / (h as f64).sqrt();
    store.insert("att.query", uniform(&[h, h], bound, rng))?;
    store.insert("att.key", uniform(&[h, h], bound, rng))?;
    store.insert("att.score", uniform(&[1, h], bound, rng))?;
    Ok(())
}
