//! Binary checkpoint: magic `APRM`, u32 version, u32 parameter count, then per
//! parameter u32 name length, name, u8 regularized flag, u32 rank, u32 dims and
//! f64 values; then u32 metadata length and UTF-8 metadata; then a u8 flag and,
//! when set, the optimizer step (u64) followed by every first and every second
//! moment in parameter order. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::optim::AdamState;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"APRM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub metadata: String,
    pub optimizer: Option<AdamState>,
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

pub fn encode(params: &ParamStore, metadata: &str, optimizer: Option<&AdamState>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, params.len());
    for p in params.iter() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        out.push(u8::from(p.regularized));
        put_u32(&mut out, p.value.ndim());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    put_u32(&mut out, metadata.len());
    out.extend_from_slice(metadata.as_bytes());
    match optimizer {
        None => out.push(0),
        Some(st) => {
            out.push(1);
            out.extend_from_slice(&st.step.to_le_bytes());
            for t in st.m.iter().chain(&st.v) {
                for x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name = r.string()?;
        let regularized = r.u8()? != 0;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.ok_or_else(|| Error::Checkpoint("shape overflow".into()))?;
        let data = r.f64s(count)?;
        params.add(&name, Tensor::new(shape, data)?, regularized)?;
    }
    let metadata = r.string()?;
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let mut read_all = || -> Result<Vec<Tensor>> {
                params
                    .iter()
                    .map(|p| Tensor::new(p.value.shape().to_vec(), r.f64s(p.value.len())?))
                    .collect()
            };
            let m = read_all()?;
            let v = read_all()?;
            Some(AdamState { step, m, v })
        }
        f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Checkpoint {
        params,
        metadata,
        optimizer,
    })
}

pub fn save(path: impl AsRef<Path>, params: &ParamStore, metadata: &str, optimizer: Option<&AdamState>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params, metadata, optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
