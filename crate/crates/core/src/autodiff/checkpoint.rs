use std::fs;
use std::path::Path;

use super::params::ParameterSet;
use crate::error::{bail, Error, Result};

const MAGIC: &[u8; 4] = b"REDC";
const VERSION: u16 = 1;

/// Parameters, optimizer state and the JSON config that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub params: ParameterSet<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_floats(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes parameters in lexicographic name order.
pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&ckpt.config)?;
    let mut out = Vec::with_capacity(64 + config.len() + ckpt.params.num_elements() * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, config.len());
    out.extend_from_slice(&config);
    out.extend_from_slice(&ckpt.params.step().to_le_bytes());
    put_u32(&mut out, ckpt.params.len());
    for p in ckpt.params.iter() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.shape[0]);
        put_u32(&mut out, p.shape[1]);
        put_floats(&mut out, &p.value);
        put_floats(&mut out, &p.m);
        put_floats(&mut out, &p.v);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            bail!(Format, "checkpoint truncated at byte {}", self.pos);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("checkpoint size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        bail!(Format, "not a checkpoint file (bad magic)");
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        bail!(Format, "unsupported checkpoint version {}", version);
    }
    let clen = r.u32()?;
    let config: serde_json::Value = serde_json::from_slice(r.take(clen)?)?;
    let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count);
    let mut moments = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()?;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let shape = [r.u32()?, r.u32()?];
        let n = shape[0] * shape[1];
        let value = r.floats(n)?;
        moments.push((name.clone(), r.floats(n)?, r.floats(n)?));
        entries.push((name, shape, value));
    }
    if r.pos != bytes.len() {
        bail!(Format, "{} trailing bytes after checkpoint", bytes.len() - r.pos);
    }
    let mut params = ParameterSet::from_named(entries)?;
    for (name, m, v) in moments {
        let p = params.by_name_mut(&name).expect("just inserted");
        p.m = m;
        p.v = v;
    }
    params.step = step;
    Ok(Checkpoint { config, params })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&fs::read(path)?)
}
