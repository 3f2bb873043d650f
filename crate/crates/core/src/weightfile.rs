//! Binary weight file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      4 bytes  "LAFD"
//! version    u32      1
//! count      u32      number of tensors
//! per tensor:
//!   name_len u16, name (UTF-8), rank u8, dims u32 x rank, payload f32 x prod(dims)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::weights::{Param, WeightStore};

pub const MAGIC: [u8; 4] = *b"LAFD";
pub const VERSION: u32 = 1;
/// Magic, version and tensor count.
pub const HEADER_BYTES: usize = 12;

/// Bytes taken by one tensor record, header included.
pub fn record_bytes(name: &str, dims: &[usize]) -> usize {
    2 + name.len() + 1 + 4 * dims.len() + 4 * dims.iter().product::<usize>()
}

pub fn encoded_len(store: &WeightStore) -> usize {
    HEADER_BYTES + store.iter().map(|(n, p)| record_bytes(n, &p.dims)).sum::<usize>()
}

pub fn encode(store: &WeightStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(encoded_len(store));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(store.len()).map_err(|_| Error::Input("too many tensors".into()))?.to_le_bytes());
    for (name, p) in store.iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Input(format!("weight name too long: {name}")))?;
        let rank = u8::try_from(p.dims.len()).map_err(|_| Error::Input(format!("rank too large for {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in &p.dims {
            let d = u32::try_from(d).map_err(|_| Error::Input(format!("dimension too large in {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<WeightStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected \"LAFD\"".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("tensor count")?;
    let mut store = WeightStore::new();
    for _ in 0..count {
        let record_start = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?).map_err(|e| Error::Format {
            offset: name_at,
            message: format!("name is not UTF-8: {e}"),
        })?;
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::Format {
            offset: record_start,
            message: format!("dims {dims:?} overflow"),
        })?;
        let payload_len = numel.checked_mul(4).ok_or_else(|| Error::Format {
            offset: record_start,
            message: "payload size overflow".into(),
        })?;
        let payload = r.take(payload_len, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if store.get(name).is_some() {
            return Err(Error::Format {
                offset: record_start,
                message: format!("duplicate tensor name `{name}`"),
            });
        }
        store.insert(name, Param::new(dims, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(store)
}

pub fn save(store: &WeightStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<WeightStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
