//! Checkpoint container: `"HYHD"`, version, tensor count, then named
//! little-endian `f32` tensors. Step counter and training config ride along
//! as `meta.*` tensors; Adam moments as `adam.m/*` and `adam.v/*`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;
use crate::train::{AdamState, TrainConfig};

pub const MAGIC: &[u8; 4] = b"HYHD";
pub const VERSION: u32 = 1;

const META_STEP: &str = "meta.step";
const META_CONFIG: &str = "meta.config";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub config: TrainConfig,
    pub step: u64,
    pub adam: Option<AdamState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.dims().len() as u32);
    for &d in t.dims() {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Bytes as one float per byte; 16-bit pieces for the step counter.
fn meta_tensors(ckpt: &Checkpoint) -> Result<[(&'static str, Tensor<f32>); 2]> {
    let step = Tensor::new(vec![4], (0..4).map(|i| ((ckpt.step >> (16 * i)) & 0xffff) as f32).collect())?;
    let json = serde_json::to_vec(&ckpt.config)?;
    let config = Tensor::new(vec![json.len()], json.into_iter().map(f32::from).collect())?;
    Ok([(META_STEP, step), (META_CONFIG, config)])
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = meta_tensors(ckpt)?;
    let adam_count = ckpt.adam.as_ref().map_or(0, |a| a.m.len() + a.v.len());
    let count = ckpt.params.len() + meta.len() + adam_count;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, count as u32);
    for (name, t) in ckpt.params.iter() {
        put_tensor(&mut out, name, t);
    }
    for (name, t) in &meta {
        put_tensor(&mut out, name, t);
    }
    if let Some(a) = &ckpt.adam {
        for (name, t) in a.m.iter() {
            put_tensor(&mut out, &format!("{ADAM_M}{name}"), t);
        }
        for (name, t) in a.v.iter() {
            put_tensor(&mut out, &format!("{ADAM_V}{name}"), t);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = self.u32()? as usize;
        let dims = (0..ndim).map(|_| Ok(self.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let data = self
            .take(n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32()?;
    let mut params = ParamStore::new();
    let (mut m, mut v) = (ParamStore::new(), ParamStore::new());
    let (mut step, mut config) = (None, None);
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        if name == META_STEP {
            if t.numel() != 4 {
                return Err(Error::Format("malformed step counter".into()));
            }
            step = Some(t.data().iter().enumerate().fold(0u64, |acc, (i, &p)| acc | ((p as u64) << (16 * i))));
        } else if name == META_CONFIG {
            let json: Vec<u8> = t.data().iter().map(|&b| b as u8).collect();
            config = Some(serde_json::from_slice::<TrainConfig>(&json)?);
        } else if let Some(rest) = name.strip_prefix(ADAM_M) {
            m.insert(rest, t);
        } else if let Some(rest) = name.strip_prefix(ADAM_V) {
            v.insert(rest, t);
        } else {
            params.insert(name, t);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    let adam = match (m.is_empty(), v.is_empty()) {
        (true, true) => None,
        _ if m.len() == params.len() && v.len() == params.len() => Some(AdamState { m, v }),
        _ => return Err(Error::Format("optimizer moments do not match the parameters".into())),
    };
    Ok(Checkpoint {
        params,
        config: config.ok_or_else(|| Error::Format("checkpoint lacks a config".into()))?,
        step: step.ok_or_else(|| Error::Format("checkpoint lacks a step counter".into()))?,
        adam,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
