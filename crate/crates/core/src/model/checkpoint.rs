//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "SSLAB1" | u32 version | u32 len, config text | [u8; 32] sha256(config text)
//! u64 epoch | f64 val_auc | u32 n_params
//! per param: u32 name_len, name | u32 rank | u32 dims[rank] | f64 data[numel]
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{build_model, Model, ModelConfig, ModelError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"SSLAB1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.model.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&Sha256::digest(text.as_bytes()));
        out.extend_from_slice(&self.meta.epoch.to_le_bytes());
        out.extend_from_slice(&self.meta.val_auc.to_le_bytes());
        out.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        for (name, t) in self.model.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let text_bytes = r.take(len)?;
        let digest = r.take(32)?;
        if Sha256::digest(text_bytes).as_slice() != digest {
            return Err(ModelError::Format("config hash mismatch".into()));
        }
        let text = std::str::from_utf8(text_bytes)
            .map_err(|_| ModelError::Format("config text is not utf-8".into()))?;
        let config = ModelConfig::from_text(text)?;
        let epoch = r.u64()?;
        let val_auc = f64::from_le_bytes(r.array()?);
        let n = r.u32()? as usize;

        let mut model = build_model(&config)?;
        let mut loaded: Vec<String> = Vec::with_capacity(n);
        let mut unknown = Vec::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| ModelError::Format("parameter name is not utf-8".into()))?;
            let rank = r.u32()? as usize;
            if rank == 0 || rank > crate::tensor::MAX_RANK {
                return Err(ModelError::Format(format!("{name}: rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| ModelError::Format("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            match model.params.get_mut(&name) {
                None => unknown.push(name),
                Some(slot) => {
                    if slot.shape() != shape.as_slice() {
                        return Err(ModelError::Format(format!(
                            "{name}: shape {shape:?}, model expects {:?}",
                            slot.shape()
                        )));
                    }
                    if loaded.contains(&name) {
                        return Err(ModelError::Format(format!("{name} appears twice")));
                    }
                    *slot = Tensor::new(shape, data)?;
                    loaded.push(name);
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if !unknown.is_empty() {
            return Err(ModelError::UnknownParam(unknown.join(", ")));
        }
        let missing: Vec<&str> = model.params.names().filter(|n| !loaded.iter().any(|l| l == n)).collect();
        if !missing.is_empty() {
            return Err(ModelError::MissingParam(missing.join(", ")));
        }
        Ok(Checkpoint {
            model,
            meta: CheckpointMeta { epoch, val_auc },
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Format("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: CheckpointMeta) -> Result<()> {
    let ck = Checkpoint {
        model: model.clone(),
        meta,
    };
    std::fs::write(path, ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
