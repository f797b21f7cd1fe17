//! Binary checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      8 bytes  "GLYPHCK\0"
//! version    u32      (1)
//! dtype      u8       0 = f32, 1 = f64
//! n_meta     u32
//!   key      u32 length + UTF-8
//!   value    u32 length + UTF-8
//! n_tensors  u32
//!   name     u32 length + UTF-8
//!   flags    u8       bit 0 = trainable
//!   ndim     u32
//!   dims     ndim × u64
//!   data     numel × dtype
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use numcore::{DType, Element, Tensor};

use crate::error::{io_err, CoreError, Result};
use crate::params::ParamStore;

const MAGIC: &[u8; 8] = b"GLYPHCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: BTreeMap<String, String>,
    /// `(group, store)` pairs; tensor names are written as `group/name`.
    pub groups: Vec<(String, ParamStore<T>)>,
}

impl<T: Element> Checkpoint<T> {
    pub fn new() -> Self {
        Self {
            meta: BTreeMap::new(),
            groups: Vec::new(),
        }
    }

    pub fn group(&self, name: &str) -> Result<&ParamStore<T>> {
        self.groups
            .iter()
            .find(|(g, _)| g == name)
            .map(|(_, s)| s)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing group `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing metadata `{key}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(match T::DTYPE {
            DType::F32 => 0,
            DType::F64 => 1,
        });
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        let n: usize = self.groups.iter().map(|(_, s)| s.len()).sum();
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for (group, store) in &self.groups {
            for p in store.params() {
                put_str(&mut out, &format!("{group}/{}", p.name));
                out.push(u8::from(p.trainable));
                out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
                for &d in p.value.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &x in p.value.data() {
                    x.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CoreError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CoreError::Checkpoint(format!("unsupported version {version}")));
        }
        let dtype = match r.take(1)?[0] {
            0 => DType::F32,
            1 => DType::F64,
            other => return Err(CoreError::Checkpoint(format!("unknown dtype tag {other}"))),
        };
        if dtype != T::DTYPE {
            return Err(CoreError::Checkpoint(format!("stored as {dtype:?}, requested {:?}", T::DTYPE)));
        }
        let mut ck = Self::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let full = r.string()?;
            let (group, name) = full
                .split_once('/')
                .ok_or_else(|| CoreError::Checkpoint(format!("tensor name `{full}` has no group")))?;
            let trainable = r.take(1)?[0] & 1 == 1;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let size = dtype.size();
            let raw = r.take(numel.checked_mul(size).ok_or_else(|| CoreError::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks(size).map(T::read_le).collect();
            let tensor = Tensor::new(&shape, data).map_err(|e| CoreError::Checkpoint(format!("{full}: {e}")))?;
            let idx = match ck.groups.iter().position(|(g, _)| g == group) {
                Some(i) => i,
                None => {
                    ck.groups.push((group.to_string(), ParamStore::new()));
                    ck.groups.len() - 1
                }
            };
            ck.groups[idx].1.insert(name, tensor, trainable)?;
        }
        if r.pos != bytes.len() {
            return Err(CoreError::Checkpoint("trailing bytes".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}

impl<T: Element> Default for Checkpoint<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CoreError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CoreError::Checkpoint("invalid UTF-8".into()))
    }
}
