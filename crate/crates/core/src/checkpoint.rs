//! Named-tensor container used for model and training-state files.
//!
//! Layout (little-endian): magic `BGCK`, version `u8`, metadata length
//! `u32` followed by that many bytes of UTF-8 JSON, tensor count `u32`, then
//! per tensor: name length `u16`, UTF-8 name, dtype tag `u8` (0 = f32,
//! 1 = f64), rank `u8`, `rank` dims as `u32`, and the flat row-major data.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{bail, Error, Result};
use crate::nd::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"BGCK";
pub const VERSION: u8 = 1;

/// Storage precision of tensor payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Format("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

impl Checkpoint {
    pub fn new(meta: Value) -> Self {
        Self { meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Adds every parameter of `store` under `prefix`.
    pub fn add_store(&mut self, prefix: &str, store: &ParamStore) {
        for p in store.iter() {
            self.push(format!("{prefix}{}", p.name), p.value.clone());
        }
    }

    /// Overwrites every parameter of `store` from the entries under `prefix`.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        for p in store.iter_mut() {
            let key = format!("{prefix}{}", p.name);
            let Some(t) = self.get(&key) else {
                bail!(Format, "checkpoint has no tensor `{key}`");
            };
            if t.shape() != p.value.shape() {
                bail!(Format, "tensor `{key}` has shape {:?}, model expects {:?}", t.shape(), p.value.shape());
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write, dtype: DType) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let Ok(len) = u16::try_from(name.len()) else {
                bail!(Format, "tensor name `{name}` is too long");
            };
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[dtype.tag(), t.shape().len() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            match dtype {
                DType::F32 => t.data().iter().try_for_each(|v| w.write_all(&(*v as f32).to_le_bytes()))?,
                DType::F64 => t.data().iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))?,
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        if &read_array::<4>(r)? != MAGIC {
            bail!(Format, "not a checkpoint file (bad magic)");
        }
        let [version] = read_array::<1>(r)?;
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let meta_len = u32::from_le_bytes(read_array(r)?) as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(truncated)?;
        let meta: Value = serde_json::from_slice(&meta)?;
        let count = u32::from_le_bytes(read_array(r)?) as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u16::from_le_bytes(read_array(r)?) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(truncated)?;
            let Ok(name) = String::from_utf8(name) else {
                bail!(Format, "tensor name is not UTF-8");
            };
            let [tag, rank] = read_array::<2>(r)?;
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(read_array(r)?) as usize);
            }
            let n: usize = shape.iter().product();
            let width = match tag {
                0 => 4,
                1 => 8,
                other => bail!(Format, "unknown dtype tag {other} for `{name}`"),
            };
            let mut raw = vec![0u8; n * width];
            r.read_exact(&mut raw).map_err(truncated)?;
            let data = if width == 4 {
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            } else {
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
            };
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, dtype)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
