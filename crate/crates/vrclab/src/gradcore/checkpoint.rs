//! Parameter checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size           field
//! 0       8              magic "VRLCCKPT"
//! 8       4              u32 format version, currently 1
//! 12      4              u32 entry count
//! ...     per entry:
//!         4              u32 name length in bytes
//!         name length    utf-8 name
//!         4              u32 rank
//!         8 * rank       u64 dims
//!         8 * numel      f64 values, row-major
//! ```

use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"VRLCCKPT";
pub const VERSION: u32 = 1;

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                "checkpoint",
                format!("truncated at byte {} (wanted {} more)", self.pos, n),
            ));
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::format("checkpoint", "name is not utf-8"))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        // guard against bogus dims before allocating
        if numel.checked_mul(8).map_or(true, |b| c.pos + b > buf.len()) {
            return Err(Error::format(
                "checkpoint",
                format!("entry '{name}' claims {numel} values past end of file"),
            ));
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(c.f64()?);
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != buf.len() {
        return Err(Error::format(
            "checkpoint",
            format!("{} trailing bytes", buf.len() - c.pos),
        ));
    }
    Ok(entries)
}

pub fn save<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let bytes = encode(entries);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    decode(&buf)
}
