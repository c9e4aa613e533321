//! Binary named-tensor checkpoints.
//!
//! Layout: the ASCII line `salientseq-ckpt v1\n`, a little-endian `u32`
//! entry count, then per entry: `u32` name length, UTF-8 name, `u32` rank,
//! `u64` per dimension, and the values as little-endian `f64`.

use std::fs;
use std::path::Path;

use super::params::Params;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"salientseq-ckpt v1\n";

pub fn encode_checkpoint<P: Params>(params: &P) -> Vec<u8> {
    let named = params.named();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::validation("checkpoint is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::validation("not a salientseq-ckpt v1 file"));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::validation("checkpoint tensor name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::validation("trailing bytes after the last checkpoint entry"));
    }
    Ok(entries)
}

/// Copies decoded entries into `params`, requiring identical names and shapes.
pub fn restore<P: Params>(params: &mut P, entries: &[(String, Tensor)]) -> Result<()> {
    let mut named = params.named_mut();
    if named.len() != entries.len() {
        return Err(Error::validation(format!(
            "checkpoint has {} tensors, model expects {}",
            entries.len(),
            named.len()
        )));
    }
    for ((name, dst), (src_name, src)) in named.iter_mut().zip(entries) {
        if name != src_name || !dst.same_shape(src) {
            return Err(Error::validation(format!(
                "checkpoint entry `{src_name}` {:?} does not match model tensor `{name}` {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        **dst = src.clone();
    }
    Ok(())
}

pub fn save_checkpoint<P: Params>(path: &Path, params: &P) -> Result<()> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint_entries(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode_checkpoint(&fs::read(path)?)
}
