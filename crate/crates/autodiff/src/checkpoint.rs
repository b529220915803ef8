//! Named-tensor container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! b"RSCK" | version | meta_len | meta (UTF-8) | count |
//!   count × ( name_len | name | ndim | dims… | f32 payload )
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata; the model crates store a JSON document here.
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
}

impl Checkpoint {
    pub fn from_store(meta: impl Into<String>, store: &ParamStore) -> Self {
        Self {
            meta: meta.into(),
            tensors: store
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copy every stored tensor whose name exists in `store` into it.
    /// Entries of `store` that the checkpoint lacks are an error.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let t = self
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            store.set_value(&name, t.clone())?;
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        put_u32(w, self.meta.len() as u32)?;
        w.write_all(self.meta.as_bytes())?;
        put_u32(w, self.tensors.len() as u32)?;
        for (name, t) in &self.tensors {
            put_u32(w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            put_u32(w, t.shape().len() as u32)?;
            for &d in t.shape() {
                put_u32(w, d as u32)?;
            }
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let meta_len = get_u32(r)? as usize;
        let meta = get_string(r, meta_len)?;
        let count = get_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = get_u32(r)? as usize;
            let name = get_string(r, name_len)?;
            let ndim = get_u32(r)? as usize;
            let shape = (0..ndim)
                .map(|_| get_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut std::io::Cursor::new(bytes))
    }
}
