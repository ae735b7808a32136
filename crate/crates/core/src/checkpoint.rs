//! Binary checkpoints: parameters, optimizer state, stream position and the
//! resolved configuration, protected by a CRC-32.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "PSRG" | version u32 | config: u32 len + UTF-8
//! | iteration u64 | seed u64 | epoch u64 | position u64
//! | tensor count u32 | per tensor: name | rank u32 | dims u64 * rank | f32 * numel
//! | optimizer count u32 | per optimizer: name | lr, beta1, beta2, eps f32 | step u64
//! |     slot count u32 | per slot: name | first moment tensor | second moment tensor
//! | crc32 u32 of every preceding byte
//! ```
//!
//! A name is `u32 len + UTF-8`; a moment tensor is `rank u32 | dims | data`.

use std::path::Path;

use indexmap::IndexMap;

use crate::data::StreamState;
use crate::tensor::{AdamConfig, AdamState, ParamSet, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PSRG";
pub const FORMAT_VERSION: u32 = 1;
/// Rank above which a stored tensor is treated as corruption.
const MAX_RANK: u32 = 8;

/// Seed and stream position: everything random about a training run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: StreamState,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Resolved configuration text the run was started with.
    pub config: String,
    /// Training iterations completed.
    pub iteration: u64,
    pub rng: RngState,
    pub tensors: IndexMap<String, Tensor>,
    pub optimizers: IndexMap<String, AdamState>,
}

impl Checkpoint {
    /// Store every entry of `params` under `prefix.name`.
    pub fn insert_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, _, t) in params.iter() {
            self.tensors.insert(format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Overwrite every entry of `params` with the tensor stored under
    /// `prefix.name`. Missing entries and shape mismatches are errors;
    /// nothing is modified unless every entry matches.
    pub fn load_params(&self, prefix: &str, params: &mut ParamSet) -> Result<()> {
        let mut found = Vec::with_capacity(params.len());
        for (name, _, t) in params.iter() {
            let key = format!("{prefix}.{name}");
            let stored = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("no tensor {key:?}")))?;
            if stored.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{key}: stored shape {:?}, expected {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            found.push((name.to_owned(), stored.clone()));
        }
        for (name, t) in found {
            *params.get_mut(&name)? = t;
        }
        Ok(())
    }

    /// The optimizer stored as `name`, checked against the trainable
    /// entries of `params`.
    pub fn optimizer_for(&self, name: &str, params: &ParamSet) -> Result<AdamState> {
        let state = self
            .optimizers
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("no optimizer {name:?}")))?;
        let slots: Vec<_> = state.moments().map(|(n, m, _)| (n, m.shape())).collect();
        let expected: Vec<_> = params.trainable().map(|(n, t)| (n, t.shape())).collect();
        if slots != expected {
            return Err(Error::Checkpoint(format!("optimizer {name:?} does not match its parameters")));
        }
        Ok(state.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, FORMAT_VERSION);
        put_str(&mut w, &self.config);
        put_u64(&mut w, self.iteration);
        put_u64(&mut w, self.rng.seed);
        put_u64(&mut w, self.rng.stream.epoch);
        put_u64(&mut w, self.rng.stream.position as u64);
        put_u32(&mut w, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut w, name);
            put_tensor(&mut w, t);
        }
        put_u32(&mut w, self.optimizers.len() as u32);
        for (name, opt) in &self.optimizers {
            put_str(&mut w, name);
            let AdamConfig { lr, beta1, beta2, eps } = opt.config;
            for v in [lr, beta1, beta2, eps] {
                w.extend_from_slice(&v.to_le_bytes());
            }
            put_u64(&mut w, opt.step_count());
            let slots: Vec<_> = opt.moments().collect();
            put_u32(&mut w, slots.len() as u32);
            for (slot, m, v) in slots {
                put_str(&mut w, slot);
                put_tensor(&mut w, m);
                put_tensor(&mut w, v);
            }
        }
        let crc = crc32fast::hash(&w);
        put_u32(&mut w, crc);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let version = u32::from_le_bytes(body[4..8].try_into().expect("length checked"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let stored = u32::from_le_bytes(tail.try_into().expect("length checked"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let config = r.string()?;
        let iteration = r.u64()?;
        let rng = RngState {
            seed: r.u64()?,
            stream: StreamState {
                epoch: r.u64()?,
                position: r.usize()?,
            },
        };
        let mut tensors = IndexMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let t = r.tensor()?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name:?}")));
            }
        }
        let mut optimizers = IndexMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let config = AdamConfig {
                lr: r.f32()?,
                beta1: r.f32()?,
                beta2: r.f32()?,
                eps: r.f32()?,
            };
            let step = r.u64()?;
            let mut slots = Vec::new();
            for _ in 0..r.u32()? {
                slots.push((r.string()?, r.tensor()?, r.tensor()?));
            }
            optimizers.insert(name, AdamState::from_parts(config, step, slots));
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            config,
            iteration,
            rng,
            tensors,
            optimizers,
        })
    }

    /// Write atomically: a sibling temporary file is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(detail) => Error::Checkpoint(format!("{}: {detail}", path.display())),
            other => other,
        })
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

fn put_tensor(w: &mut Vec<u8>, t: &Tensor) {
    put_u32(w, t.rank() as u32);
    for &d in t.shape() {
        put_u64(w, d as u64);
    }
    for v in t.data() {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("value exceeds address space".into()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()?;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("tensor rank {rank} exceeds {MAX_RANK}")));
        }
        let dims = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= self.buf.len() - self.pos))
            .ok_or_else(|| Error::Checkpoint(format!("tensor dims {dims:?} exceed the remaining data")))?;
        let data = self
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(dims, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
