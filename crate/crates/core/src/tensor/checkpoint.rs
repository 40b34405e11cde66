//! Binary parameter checkpoints.
//!
//! Layout: the ASCII magic `LMDT1`, then for each entry until end of file:
//! `u32 name_len`, UTF-8 name, `u32 rank`, `rank × u32` dims, and
//! `product(dims) × f32` values, all little-endian. Text metadata is stored
//! as rank-1 entries named `meta:<key>` whose values are the UTF-8 bytes.

use std::io::{Read, Write};
use std::path::Path;

use super::{Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"LMDT1";
const META_PREFIX: &str = "meta:";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        for (name, t) in &self.tensors {
            put_entry(&mut out, name, t.shape(), t.data().iter().copied());
        }
        for (key, text) in &self.meta {
            let name = format!("{META_PREFIX}{key}");
            put_entry(&mut out, &name, &[text.len()], text.bytes().map(f32::from));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic at byte 0".into()));
        }
        let mut ck = Checkpoint::default();
        while r.pos < bytes.len() {
            let start = r.pos;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| TensorError::Checkpoint(format!("name at byte {start} is not UTF-8")))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            let raw = r.take(count.checked_mul(4).ok_or_else(|| {
                TensorError::Checkpoint(format!("entry `{name}` is too large"))
            })?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            if let Some(key) = name.strip_prefix(META_PREFIX) {
                let text: Vec<u8> = values.map(|v| v as u8).collect();
                let text = String::from_utf8(text).map_err(|_| {
                    TensorError::Checkpoint(format!("metadata `{key}` is not UTF-8"))
                })?;
                ck.meta.push((key.to_string(), text));
            } else {
                let t = Tensor::new(dims, values.collect())?;
                ck.tensors.push((name, t));
            }
        }
        Ok(ck)
    }
}

fn put_entry(out: &mut Vec<u8>, name: &str, dims: &[usize], values: impl Iterator<Item = f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(TensorError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more bytes)",
                self.pos
            )));
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

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ck.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
