//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"NGPUCKPT"
//! version  u32
//! header   u32 length + UTF-8 `key=value` lines (config, fingerprint,
//!          step, seed, adam state, curriculum)
//! table    u32 count, then per tensor:
//!          u16 name length, name, u8 dtype, u8 rank, rank × u64 dims,
//!          u64 offset into data, u64 byte length
//! data     concatenated tensor payloads
//! crc      u32 CRC-32 of every preceding byte
//! ```
//!
//! Tensor names are `param/<name>`, `adam.m/<name>` and `adam.v/<name>`.
//! A plain-text sidecar (`<path>.txt`) repeats the config and fingerprint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Adam, AdamConfig, CurriculumState};
use crate::autograd::ParameterStore;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::tensor::{DType, Real, Tensor};

const MAGIC: &[u8; 8] = b"NGPUCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub step: u64,
    /// Run seed; with `step` this fixes every future random draw.
    pub seed: u64,
    pub curriculum: Option<CurriculumState>,
}

fn header<T: Real>(c: &Checkpoint<T>) -> String {
    let mut h = c.model.config.canonical();
    let a = &c.adam.config;
    h += &format!("fingerprint={}\n", c.model.config.fingerprint());
    h += &format!("dtype={}\n", T::DTYPE.code());
    h += &format!("step={}\nseed={}\n", c.step, c.seed);
    h += &format!(
        "adam.t={}\nadam.lr={:016x}\nadam.beta1={:016x}\nadam.beta2={:016x}\nadam.epsilon={:016x}\n",
        c.adam.t,
        a.lr.to_bits(),
        a.beta1.to_bits(),
        a.beta2.to_bits(),
        a.epsilon.to_bits()
    );
    if let Some(cur) = c.curriculum {
        h += &format!("curriculum.len={}\ncurriculum.accuracy={:016x}\n", cur.len, cur.accuracy.to_bits());
    }
    h
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Serializes `c` to bytes.
pub fn encode_checkpoint<T: Real>(c: &Checkpoint<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let h = header(c);
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(h.as_bytes());

    let groups = [("param", &c.model.params), ("adam.m", &c.adam.m), ("adam.v", &c.adam.v)];
    let entries: Vec<(String, &Tensor<T>)> = groups
        .iter()
        .flat_map(|(prefix, store)| store.iter().map(move |(n, t)| (format!("{prefix}/{n}"), t)))
        .collect();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.code());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let bytes = (t.len() * T::DTYPE.size()) as u64;
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&bytes.to_le_bytes());
        offset += bytes;
    }
    for (_, t) in &entries {
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Writes atomically (temporary file, then rename) plus the sidecar.
pub fn save_checkpoint<T: Real>(path: &Path, c: &Checkpoint<T>) -> Result<()> {
    let bytes = encode_checkpoint(c);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    let note = format!(
        "{}fingerprint={}\nstep={}\n",
        c.model.config.canonical(),
        c.model.config.fingerprint(),
        c.step
    );
    fs::write(sidecar(path), note)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            what: "checkpoint",
            detail: format!("unexpected end of data at byte {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn field<'a>(h: &BTreeMap<&str, &'a str>, key: &str) -> Result<&'a str> {
    h.get(key).copied().ok_or_else(|| format_err(format!("missing header field {key}")))
}

fn parse<F: std::str::FromStr>(h: &BTreeMap<&str, &str>, key: &str) -> Result<F> {
    field(h, key)?
        .parse()
        .map_err(|_| format_err(format!("bad header field {key}")))
}

fn parse_bits(h: &BTreeMap<&str, &str>, key: &str) -> Result<f64> {
    u64::from_str_radix(field(h, key)?, 16)
        .map(f64::from_bits)
        .map_err(|_| format_err(format!("bad header field {key}")))
}

/// Parses checkpoint bytes. `path` is only used in error messages.
pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint<T>> {
    let checksum = || Error::Checksum { path: path.to_path_buf() };
    if !(bytes.starts_with(MAGIC) || MAGIC.starts_with(bytes)) {
        return Err(format_err("not a checkpoint file (bad magic)"));
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(checksum());
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(checksum());
    }
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let hlen = r.u32()? as usize;
    let htext = std::str::from_utf8(r.take(hlen)?).map_err(|_| format_err("header is not UTF-8"))?;
    let h: BTreeMap<&str, &str> = htext.lines().filter_map(|l| l.split_once('=')).collect();

    let config = ModelConfig::from_canonical(htext)?;
    let fingerprint = field(&h, "fingerprint")?;
    if fingerprint != config.fingerprint() {
        return Err(format_err("header fingerprint does not match its config"));
    }
    if let Some(exp) = expected {
        if exp.fingerprint() != fingerprint {
            return Err(Error::Fingerprint {
                expected: exp.fingerprint(),
                found: fingerprint.to_string(),
            });
        }
    }
    let dtype: u8 = parse(&h, "dtype")?;
    if dtype != T::DTYPE.code() {
        return Err(format_err(format!(
            "checkpoint holds {:?} tensors, caller asked for {:?}",
            DType::from_code(dtype),
            T::DTYPE
        )));
    }

    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| format_err("tensor name is not UTF-8"))?
            .to_string();
        let dt = r.u8()?;
        if dt != T::DTYPE.code() {
            return Err(format_err(format!("tensor {name} has dtype code {dt}")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        table.push((name, shape, offset, len));
    }
    let data = &body[r.pos..];
    let mut stores = [ParameterStore::new(), ParameterStore::new(), ParameterStore::new()];
    for (name, shape, offset, len) in table {
        let chunk = offset
            .checked_add(len)
            .and_then(|end| data.get(offset..end))
            .ok_or_else(|| format_err(format!("tensor {name} lies outside the data section")))?;
        let size = T::DTYPE.size();
        let values: Vec<T> = chunk.chunks_exact(size).map(T::read_le).collect();
        let t = Tensor::new(&shape, values)?;
        let (group, pname) = name.split_once('/').ok_or_else(|| format_err(format!("bad tensor name {name}")))?;
        let slot = match group {
            "param" => 0,
            "adam.m" => 1,
            "adam.v" => 2,
            _ => return Err(format_err(format!("unknown tensor group {group}"))),
        };
        stores[slot].insert(pname, t)?;
    }
    let [params, m, v] = stores;
    let model = Model { config, params };
    let reference = Model::<T>::zeros(config)?;
    for (store, what) in [(&model.params, "parameters"), (&m, "adam.m"), (&v, "adam.v")] {
        let same = store.len() == reference.params.len()
            && reference
                .params
                .iter()
                .all(|(n, t)| store.get(n).map(|x| x.shape() == t.shape()).unwrap_or(false));
        if !same {
            return Err(format_err(format!("{what} do not match the configured architecture")));
        }
    }
    let curriculum = match h.get("curriculum.len") {
        Some(_) => Some(CurriculumState {
            len: parse(&h, "curriculum.len")?,
            accuracy: parse_bits(&h, "curriculum.accuracy")?,
        }),
        None => None,
    };
    Ok(Checkpoint {
        model,
        adam: Adam {
            config: AdamConfig {
                lr: parse_bits(&h, "adam.lr")?,
                beta1: parse_bits(&h, "adam.beta1")?,
                beta2: parse_bits(&h, "adam.beta2")?,
                epsilon: parse_bits(&h, "adam.epsilon")?,
            },
            m,
            v,
            t: parse(&h, "adam.t")?,
        },
        step: parse(&h, "step")?,
        seed: parse(&h, "seed")?,
        curriculum,
    })
}

/// Reads and validates a checkpoint. With `expected`, a checkpoint for a
/// different architecture is rejected.
pub fn load_checkpoint<T: Real>(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes, path, expected)
}
