//! Binary checkpoints: `ESRN` magic, version, model spec, numeric mode, then
//! named parameter blocks (with Adam state) and buffers, little-endian.

use std::path::Path;

use crate::error::{CkmError, Result};
use crate::kv::KvDoc;

use super::model::ModelSpec;
use super::params::{Param, ParamStore};
use super::real::{NumericMode, Real};
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ESRN";
pub const CHECKPOINT_VERSION: u16 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CkmError::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self, len: usize) -> Result<String> {
        let at = self.pos as u64;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CkmError::format(at, "text is not UTF-8"))
    }

    fn values<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        Ok(self
            .take(n * T::BYTES)?
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect())
    }

    fn named_tensor<T: Real>(&mut self) -> Result<(String, Tensor<T>)> {
        let len = self.u16()? as usize;
        let name = self.text(len)?;
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n = shape.iter().product();
        let data = self.values::<T>(n)?;
        Ok((name, Tensor::new(shape, data)?))
    }
}

fn put_named<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn checkpoint_to_bytes<T: Real>(spec: &ModelSpec, store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let spec_text = spec.to_kv().to_text();
    out.extend_from_slice(&(spec_text.len() as u32).to_le_bytes());
    out.extend_from_slice(spec_text.as_bytes());
    out.push(T::MODE.code());
    out.extend_from_slice(&(store.params().len() as u32).to_le_bytes());
    for p in store.params() {
        put_named(&mut out, p.name(), p.value());
        out.extend_from_slice(&p.step().to_le_bytes());
        let (m, v) = p.moments();
        for &x in m.iter().chain(v) {
            x.write_le(&mut out);
        }
    }
    out.extend_from_slice(&(store.buffers().len() as u32).to_le_bytes());
    for (name, t) in store.buffers() {
        put_named(&mut out, name, t);
    }
    out
}

/// Spec and numeric mode without decoding the parameter blocks.
pub fn checkpoint_header(bytes: &[u8]) -> Result<(ModelSpec, NumericMode)> {
    let mut c = Cursor { bytes, pos: 0 };
    read_header(&mut c)
}

fn read_header(c: &mut Cursor<'_>) -> Result<(ModelSpec, NumericMode)> {
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(CkmError::format(0, "bad magic, expected `ESRN`"));
    }
    let version = c.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(CkmError::format(
            4,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let len = c.u32()? as usize;
    let at = c.pos as u64;
    let text = c.text(len)?;
    let spec = ModelSpec::from_kv(&KvDoc::parse(&text)?)
        .map_err(|e| CkmError::format(at, e.to_string()))?;
    let code_at = c.pos as u64;
    let code = c.u8()?;
    let mode = NumericMode::from_code(code)
        .ok_or_else(|| CkmError::format(code_at, format!("unknown numeric mode {code}")))?;
    Ok((spec, mode))
}

pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8]) -> Result<(ModelSpec, ParamStore<T>)> {
    let mut c = Cursor { bytes, pos: 0 };
    let (spec, mode) = read_header(&mut c)?;
    if mode != T::MODE {
        return Err(CkmError::invalid(format!(
            "checkpoint holds {} values, {} requested",
            mode.name(),
            T::MODE.name()
        )));
    }
    let mut store = ParamStore::new();
    for _ in 0..c.u32()? {
        let (name, value) = c.named_tensor::<T>()?;
        let n = value.numel();
        let at = c.pos as u64;
        let idx = store
            .add(&name, value)
            .map_err(|e| CkmError::format(at, e.to_string()))?;
        let step = c.u64()?;
        let m = c.values::<T>(n)?;
        let v = c.values::<T>(n)?;
        let p: &mut Param<T> = &mut store.params_mut()[idx];
        p.step = step;
        p.m = m;
        p.v = v;
    }
    for _ in 0..c.u32()? {
        let (name, value) = c.named_tensor::<T>()?;
        let at = c.pos as u64;
        store
            .add_buffer(&name, value)
            .map_err(|e| CkmError::format(at, e.to_string()))?;
    }
    if c.pos != bytes.len() {
        return Err(CkmError::format(
            c.pos as u64,
            "trailing bytes after checkpoint",
        ));
    }
    let fresh = super::model::init_params::<T>(&spec, 0)?;
    let layout_matches = fresh.params().len() == store.params().len()
        && fresh
            .params()
            .iter()
            .zip(store.params())
            .all(|(a, b)| a.name() == b.name() && a.value().shape() == b.value().shape());
    if !layout_matches {
        return Err(CkmError::format(
            0,
            "parameter blocks do not match the stored model spec",
        ));
    }
    Ok((spec, store))
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    spec: &ModelSpec,
    store: &ParamStore<T>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(spec, store)).map_err(|e| CkmError::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(ModelSpec, ParamStore<T>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CkmError::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

pub fn read_checkpoint_header(path: impl AsRef<Path>) -> Result<(ModelSpec, NumericMode)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CkmError::io(path, e))?;
    checkpoint_header(&bytes)
}
