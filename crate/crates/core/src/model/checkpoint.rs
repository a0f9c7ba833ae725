//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RRTN-CKPT"                9 bytes
//! version                    u32 (currently 1)
//! config length              u32, then that many bytes of JSON model config
//! block count                u32
//! per block:
//!   name length              u32, then UTF-8 name
//!   rank                     u32
//!   dims                     rank × u64
//!   values                   numel × f64
//! ```

use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 9] = b"RRTN-CKPT";
pub const CKPT_VERSION: u32 = 1;

pub fn to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = CKPT_MAGIC.to_vec();
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(params.config())?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(params.entries().len() as u32).to_le_bytes());
    for (name, t) in params.entries() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
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
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CKPT_MAGIC.len(), "magic")? != CKPT_MAGIC {
        return Err(Error::format(0, "bad magic, expected RRTN-CKPT"));
    }
    let at = r.pos as u64;
    let version = r.u32("version")?;
    if version != CKPT_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")? as usize;
    let at = r.pos as u64;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len, "config")?).map_err(|e| Error::format(at, format!("config: {e}")))?;
    let blocks = r.u32("block count")? as usize;
    let mut entries = Vec::with_capacity(blocks.min(1024));
    for _ in 0..blocks {
        let len = r.u32("name length")? as usize;
        let at = r.pos as u64;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let at = r.pos as u64;
        let shape = (0..rank)
            .map(|_| r.u64("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= bytes.len() / 8)
            .ok_or_else(|| Error::format(at, format!("implausible shape {shape:?} for {name}")))?;
        let data = r
            .take(numel * 8, "values")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last block"));
    }
    ModelParams::from_entries(config, entries)
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(params)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    from_bytes(&std::fs::read(path)?)
}
