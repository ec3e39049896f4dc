use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"NDGW";
pub const WEIGHTS_VERSION: u32 = 1;

pub type NamedTensor = (String, Tensor);

/// Layout, all integers little-endian `u32`:
///
/// ```text
/// "NDGW" version count
/// per tensor: name_len name rank dims[rank] f64 payload
/// ```
///
/// Tensors are written with rank 3 (channels, height, width).
pub fn encode_weights<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = WEIGHTS_MAGIC.to_vec();
    let u32_of = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::Domain(format!("{what} {n} exceeds u32")))
    };
    out.extend(WEIGHTS_VERSION.to_le_bytes());
    out.extend(u32_of(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in tensors {
        out.extend(u32_of(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let s = t.shape();
        out.extend(3u32.to_le_bytes());
        for d in [s.channels, s.height, s.width] {
            out.extend(u32_of(d, "dimension")?.to_le_bytes());
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                format: "weight container",
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Rank 0 to 3 tensors are accepted; missing leading dimensions are 1.
pub fn decode_weights(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::format("weight container", "bad magic"));
    }
    let version = c.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Unsupported(format!(
            "weight container version {version} (expected {WEIGHTS_VERSION})"
        )));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::format("weight container", "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u32()? as usize;
        if rank > 3 {
            return Err(Error::Unsupported(format!("tensor `{name}` has rank {rank}")));
        }
        let mut dims = [1usize; 3];
        for d in &mut dims[3 - rank..] {
            *d = c.u32()? as usize;
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format("weight container", "tensor size overflows"))?;
        let data = c
            .take(n)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(Shape::new(dims[0], dims[1], dims[2]), data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::format("weight container", "trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn write_weights<'a>(
    path: impl AsRef<Path>,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    write_atomic(path, &encode_weights(tensors)?)
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    decode_weights(&std::fs::read(path)?)
}
