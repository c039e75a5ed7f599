//! `NPRM` checkpoint container.
//!
//! ```text
//! "NPRM"
//! u32 len | architecture descriptor (UTF-8)
//! u32 len | input representation tag (UTF-8)
//! u32 parameter count
//! per parameter: u32 len | name | u32 ndims | u32 dims… | f32 payload
//! ```
//! Everything little-endian.

use std::path::Path;

use super::model::{DetectorModel, Param, ARCHITECTURE};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NPRM";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DetectorModel<f32>,
    /// Which input the model was trained on, see `data::Representation`.
    pub input: String,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
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
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(4 * self.model.num_parameters() + 1024);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        put_str(&mut buf, ARCHITECTURE);
        put_str(&mut buf, &self.input);
        buf.extend_from_slice(&(self.model.params().len() as u32).to_le_bytes());
        for p in self.model.params() {
            put_str(&mut buf, &p.name);
            buf.extend_from_slice(&(p.dims.len() as u32).to_le_bytes());
            for &d in &p.dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &p.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Format("not an NPRM checkpoint (bad magic)".into()));
        }
        let arch = r.string()?;
        if arch != ARCHITECTURE {
            return Err(Error::Format(format!(
                "checkpoint architecture '{arch}' does not match '{ARCHITECTURE}'"
            )));
        }
        let input = r.string()?;
        let count = r.u32()?;
        if count > 1024 {
            return Err(Error::Format(format!("implausible parameter count {count}")));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let ndims = r.u32()?;
            if ndims > 8 {
                return Err(Error::Format(format!("parameter {name} has {ndims} dims")));
            }
            let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            params.push(Param { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let model = DetectorModel::from_params(params).map_err(|e| match e {
            Error::NonFinite(m) => Error::Format(format!("non-finite {m}")),
            other => other,
        })?;
        Ok(Self { model, input })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}
