//! Binary checkpoint format.
//!
//! ```text
//! magic    b"SEGFLOWC"
//! version  u32 LE
//! config   u32 LE length + UTF-8 key=value text
//! object   u32 LE selected channel, u32::MAX when unset
//! count    u32 LE number of arrays
//! array*   u16 LE name length, name, u8 rank, u32 LE dims, f32 LE data
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::pathways::{ModelConfig, ModelState, Param};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SEGFLOWC";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode(state: &ModelState<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + state.parameter_count() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let cfg = state.config.to_kv();
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(cfg.as_bytes());
    put_u32(&mut out, state.object_channel.map_or(u32::MAX, |c| c as u32));
    put_u32(&mut out, state.params.len() as u32);
    for p in &state.params {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.ndim() as u8);
        for &d in p.value.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(alloc::format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint. When `expected` is given, a differing stored
/// configuration is an error.
pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<ModelState<f32>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a segflow checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(alloc::format!("unsupported format version {version}")));
    }
    let len = r.u32()? as usize;
    let text = core::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::Checkpoint("configuration is not UTF-8".into()))?;
    let config = ModelConfig::from_kv(text)?;
    if let Some(want) = expected {
        if want != &config {
            return Err(Error::Checkpoint(alloc::format!(
                "configuration mismatch: checkpoint has\n{}expected\n{}",
                config.to_kv(),
                want.to_kv()
            )));
        }
    }
    let object = r.u32()?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push(Param {
            name,
            value: Tensor::new(&shape, data)?,
        });
    }
    if r.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let mut state = ModelState::from_params(&config, params)?;
    if object != u32::MAX {
        let c = object as usize;
        if c >= config.segments {
            return Err(Error::Checkpoint(alloc::format!("object channel {c} out of range")));
        }
        state.object_channel = Some(c);
    }
    Ok(state)
}
