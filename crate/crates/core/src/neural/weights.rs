//! `.spw` weight files: "SPW1", then per parameter a u16 name length, the name, a u8 rank,
//! u32 dims and f32 data, all little endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::neural::arch::ParamStore;
use crate::neural::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPW1";

pub fn encode_weights(store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    for (name, t) in &store.params {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| Error::Format(format!("rank too large: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format("truncated weight file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ParamStore<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing SPW1 magic".into()));
    }
    let mut c = Cursor { buf: bytes, pos: 4 };
    let mut store = ParamStore::new();
    while c.pos < bytes.len() {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?.to_string();
        let rank = c.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(c.take(4)?.try_into().unwrap()) as usize);
        }
        let n: usize = dims.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if store.contains(&name) {
            return Err(Error::Format(format!("duplicate parameter `{name}`")));
        }
        store.insert(&name, Tensor { dims, data });
    }
    Ok(store)
}

pub fn save_weights(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_weights(store)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ParamStore<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_weights(&bytes)
}
