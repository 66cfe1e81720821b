//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "FNCK"  u32 version
//! u32 config length, config bytes (canonical TOML)
//! u64 epoch, u64 step_in_epoch, u64 global_step, u64 adam_step
//! u32 tensor count
//! per tensor: u32 name length, name, u32 rank, u64 extents, f32 data
//! ```
//!
//! Tensors are the sixteen parameters in canonical order followed by
//! `adam.m.<name>` and `adam.v.<name>` for each of them.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::FusionNetParams;
use crate::tensor::{AdamState, Tensor};

use super::TrainConfig;

pub const MAGIC: &[u8; 4] = b"FNCK";
pub const FORMAT_VERSION: u32 = 1;

/// Position in the data stream. The shuffle of each epoch is derived from
/// `(config.seed, epoch)`, so these counters are the whole RNG state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    pub epoch: u64,
    pub step_in_epoch: u64,
    pub global_step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: FusionNetParams<f32>,
    /// One state per parameter tensor, canonical order.
    pub adam: Vec<AdamState<f32>>,
    pub progress: Progress,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let named = self.params.named_tensors();
        if self.adam.len() != named.len() {
            return Err(Error::Contract(format!(
                "{} optimiser states for {} parameters",
                self.adam.len(),
                named.len()
            )));
        }
        let adam_step = self.adam.first().map_or(0, |s| s.step);
        if self.adam.iter().any(|s| s.step != adam_step) {
            return Err(Error::Contract("optimiser states disagree on the step count".into()));
        }
        let config = self.config.to_toml()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_u32(&mut out, config.len())?;
        out.extend_from_slice(config.as_bytes());
        let p = &self.progress;
        for v in [p.epoch, p.step_in_epoch, p.global_step, adam_step] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, 3 * named.len())?;
        for (name, t) in &named {
            put_tensor(&mut out, name, t)?;
        }
        for (kind, pick) in [("m", 0), ("v", 1)] {
            for ((name, _), state) in named.iter().zip(&self.adam) {
                let t = if pick == 0 { &state.m } else { &state.v };
                put_tensor(&mut out, &format!("adam.{kind}.{name}"), t)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format { offset: 0, detail: "bad magic, not a checkpoint".into() });
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.fail_at(at, format!("unsupported version {version}, expected {FORMAT_VERSION}")));
        }
        let at = r.pos;
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.fail_at(at, "config is not UTF-8".into()))?;
        let config = TrainConfig::from_toml(text).map_err(|e| r.fail_at(at, format!("bad config: {e}")))?;
        let progress = Progress {
            epoch: r.u64()?,
            step_in_epoch: r.u64()?,
            global_step: r.u64()?,
        };
        let adam_step = r.u64()?;

        let template = FusionNetParams::<f32>::init(config.channels, 0, crate::model::InitScheme::Zeros)
            .map_err(|e| r.fail_at(at, e.to_string()))?;
        let names: Vec<String> = template.named_tensors().into_iter().map(|(n, _)| n).collect();
        let at = r.pos;
        let count = r.u32()? as usize;
        if count != 3 * names.len() {
            return Err(r.fail_at(at, format!("expected {} tensors, found {count}", 3 * names.len())));
        }
        let expected = names
            .iter()
            .cloned()
            .chain(names.iter().map(|n| format!("adam.m.{n}")))
            .chain(names.iter().map(|n| format!("adam.v.{n}")));
        let mut tensors = Vec::with_capacity(count);
        for name in expected {
            tensors.push(r.tensor(&name)?);
        }
        if r.pos != bytes.len() {
            return Err(r.fail_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut rest = tensors.split_off(names.len());
        let vs = rest.split_off(names.len());
        let params = FusionNetParams::from_tensors(config.channels, tensors)?;
        let adam = rest
            .into_iter()
            .zip(vs)
            .map(|(m, v)| {
                let mut s = AdamState::new(m.shape());
                s.step = adam_step;
                s.m = m;
                s.v = v;
                s
            })
            .collect::<Vec<_>>();
        for ((name, p), s) in params.named_tensors().iter().zip(&adam) {
            if p.shape() != s.m.shape() || p.shape() != s.v.shape() {
                return Err(Error::Format {
                    offset: bytes.len() as u64,
                    detail: format!("optimiser moments for {name} do not match the parameter shape"),
                });
            }
        }
        Ok(Checkpoint { config, params, adam, progress })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit the u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len())?;
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail_at(&self, offset: usize, detail: String) -> Error {
        Error::Format { offset: offset as u64, detail }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail_at(
                self.pos,
                format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self, expected: &str) -> Result<Tensor<f32>> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let name = self.take(len)?;
        if name != expected.as_bytes() {
            return Err(self.fail_at(
                at,
                format!("expected tensor {expected}, found {}", String::from_utf8_lossy(name)),
            ));
        }
        let at = self.pos;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(self.fail_at(at, format!("implausible rank {rank} for {expected}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = self.u64()?;
            shape.push(usize::try_from(d).map_err(|_| self.fail_at(at, format!("extent {d} too large")))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| self.fail_at(at, format!("tensor {expected} is too large")))?;
        let raw = self.take(n)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Tensor::new(shape, data)
    }
}
