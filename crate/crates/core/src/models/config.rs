use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Neural GPU: outputs read independently from the final state.
    Baseline,
    /// Output also conditioned on the previous output symbol.
    Markovian,
    /// Active-memory decoder with an output tape.
    Extended,
    /// Small recurrent encoder-decoder with additive attention.
    Attention,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Markovian,
        Variant::Extended,
        Variant::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Markovian => "markovian",
            Variant::Extended => "extended",
            Variant::Attention => "attention",
        }
    }

    /// Whether the memory length is the decode length (active-memory models).
    pub fn memory_sized(self) -> bool {
        !matches!(self, Variant::Attention)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision {s:?}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel_w: usize,
    pub kernel_h: usize,
    pub vocab_in: usize,
    pub vocab_out: usize,
    pub precision: Precision,
    pub dropout: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: l=2, w=4, k=3, m=32.
    pub fn desk(variant: Variant, vocab_in: usize, vocab_out: usize) -> Self {
        ModelConfig {
            variant,
            layers: 2,
            width: 4,
            channels: 32,
            kernel_w: 3,
            kernel_h: 3,
            vocab_in,
            vocab_out,
            precision: Precision::F32,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if self.width == 0 || self.channels == 0 {
            return bad("width and channels must be >= 1");
        }
        if self.kernel_w % 2 == 0 || self.kernel_h % 2 == 0 {
            return Err(Error::EvenKernel {
                kw: self.kernel_w,
                kh: self.kernel_h,
            });
        }
        if self.vocab_in == 0 || self.vocab_out == 0 {
            return bad("vocabularies must be non-empty");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }

    /// Row index of the GO symbol in the output embedding (one past the
    /// last output class).
    pub fn go_symbol(&self) -> usize {
        self.vocab_out
    }

    /// Canonical `key=value` rendering; the fingerprint hashes this.
    pub fn canonical(&self) -> String {
        format!(
            "variant={}\nlayers={}\nwidth={}\nchannels={}\nkernel_w={}\nkernel_h={}\nvocab_in={}\nvocab_out={}\nprecision={}\ndropout={}\n",
            self.variant,
            self.layers,
            self.width,
            self.channels,
            self.kernel_w,
            self.kernel_h,
            self.vocab_in,
            self.vocab_out,
            self.precision.name(),
            self.dropout,
        )
    }

    /// Parses the `key=value` lines written by [`canonical`](Self::canonical);
    /// unknown keys are ignored.
    pub fn from_canonical(text: &str) -> Result<Self> {
        let map: std::collections::HashMap<&str, &str> =
            text.lines().filter_map(|l| l.split_once('=')).map(|(k, v)| (k.trim(), v.trim())).collect();
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Config(format!("missing {k}")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Config(format!("bad value for {k}"))) };
        let config = ModelConfig {
            variant: get("variant")?.parse()?,
            layers: num("layers")?,
            width: num("width")?,
            channels: num("channels")?,
            kernel_w: num("kernel_w")?,
            kernel_h: num("kernel_h")?,
            vocab_in: num("vocab_in")?,
            vocab_out: num("vocab_out")?,
            precision: get("precision")?.parse()?,
            dropout: get("dropout")?.parse().map_err(|_| Error::Config("bad value for dropout".into()))?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parameter count implied by the tensor shapes.
    pub fn param_count(&self) -> usize {
        let (m, l) = (self.channels, self.layers);
        let (vi, vo) = (self.vocab_in, self.vocab_out);
        let bank = self.kernel_w * self.kernel_h * m * m;
        let cgru = 3 * bank + 3 * m;
        match self.variant {
            Variant::Baseline => vi * m + l * cgru + vo * m,
            Variant::Markovian => vi * m + l * cgru + (vo + 1) * m + vo * 2 * m,
            Variant::Extended => vi * m + l * cgru + l * (cgru + 3 * bank) + vo * m + vo * m,
            Variant::Attention => {
                let gru = 3 * (2 * m * m + m);
                vi * m + 2 * gru + (vo + 1) * m + 2 * m * m + m + vo * 2 * m
            }
        }
    }
}
