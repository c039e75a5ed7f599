//! `NPR1` binary container.
//!
//! ```text
//! "NPR1" | u32 height | u32 width | u32 channels | u8 l | u8 pivot code | f32 × h·w·c
//! ```
//! All integers and floats little-endian; samples row-major, channel-last.

use std::io::{Read, Write};
use std::path::Path;

use super::{GridSpec, NprMap};
use crate::error::{Error, Result};

pub const NPR_MAGIC: &[u8; 4] = b"NPR1";

pub fn write_npr<W: Write>(map: &NprMap, mut out: W) -> Result<()> {
    let io = |e| Error::io("writing NPR1 stream", e);
    let mut buf = Vec::with_capacity(18 + map.data().len() * 4);
    buf.extend_from_slice(NPR_MAGIC);
    buf.extend_from_slice(&(map.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.channels() as u32).to_le_bytes());
    buf.push(map.grid().side() as u8);
    buf.push(map.grid().pivot_code());
    for v in map.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf).map_err(io)
}

pub fn read_npr<R: Read>(mut input: R) -> Result<NprMap> {
    let mut header = [0u8; 18];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated NPR1 header".into()))?;
    if &header[..4] != NPR_MAGIC {
        return Err(Error::Format("bad NPR1 magic".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (u32_at(4), u32_at(8), u32_at(12));
    let grid = GridSpec::from_codes(header[16], header[17])
        .map_err(|e| Error::Format(format!("NPR1 grid: {e}")))?;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("NPR1 dimensions overflow".into()))?;
    let mut payload = Vec::new();
    input
        .read_to_end(&mut payload)
        .map_err(|e| Error::io("reading NPR1 payload", e))?;
    if payload.len() != n * 4 {
        return Err(Error::Format(format!(
            "NPR1 payload holds {} bytes, header promises {}",
            payload.len(),
            n * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    NprMap::from_parts(h, w, c, data, grid).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_npr_file(map: &NprMap, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_npr(map, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_npr_file(path: &Path) -> Result<NprMap> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_npr(bytes.as_slice())
}
