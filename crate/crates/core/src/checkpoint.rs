//! Flat binary parameter checkpoints.
//!
//! Layout (little-endian): magic `PSLB`, `u32` version, then one record per parameter
//! until end of file: `u32` name length, UTF-8 name, `u32` rank, `u32` extents, `f32` data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PSLB";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err(format!("truncated: wanted {n} bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes a checkpoint; `path` only labels error messages.
pub fn decode<T: Scalar>(buf: &[u8], path: &Path) -> Result<ParamStore<T>> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic, expected PSLB"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    while r.pos < buf.len() {
        let len = r.u32()? as usize;
        let start = r.pos;
        let name = match std::str::from_utf8(r.take(len)?) {
            Ok(s) => s.to_string(),
            Err(_) => {
                r.pos = start;
                return Err(r.err("parameter name is not UTF-8"));
            }
        };
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = r.take(n * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| r.err(e.to_string()))?;
        store.add(name, t).map_err(|e| r.err(e.to_string()))?;
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}

/// Copies every tensor of `src` into the same-named parameter of `dst`.
pub fn restore_into<T: Scalar>(dst: &mut ParamStore<T>, src: &ParamStore<T>) -> Result<()> {
    for (_, name, t) in src.iter() {
        let id = dst
            .id(name)
            .ok_or_else(|| Error::contract(format!("checkpoint parameter `{name}` unknown to model")))?;
        dst.set(id, t.clone())?;
    }
    if src.len() != dst.len() {
        return Err(Error::contract(format!(
            "checkpoint has {} parameters, model has {}",
            src.len(),
            dst.len()
        )));
    }
    Ok(())
}
