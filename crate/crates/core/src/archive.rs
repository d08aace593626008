//! Named-tensor archive used for model checkpoints.
//!
//! Layout (little-endian): magic `SLLA`, u32 metadata length, UTF-8
//! metadata, u32 tensor count, then per tensor: u32 name length, UTF-8 name,
//! rank byte, u32 dims, fp32 values.

use std::path::Path;

use crate::codec::{put_shape, put_u32, put_values, Reader};
use crate::error::{Error, Result};
use crate::nn::{Network, Scalar, Tensor};

pub const ARCHIVE_MAGIC: [u8; 4] = *b"SLLA";

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub metadata: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Archive {
    pub fn new(metadata: impl Into<String>) -> Self {
        Self { metadata: metadata.into(), tensors: Vec::new() }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    /// Adds every parameter and running buffer of `net` under `prefix`.
    pub fn push_network<T: Scalar>(&mut self, prefix: &str, net: &Network<T>) {
        for (i, p) in net.params().into_iter().enumerate() {
            self.push(format!("{prefix}.param{i}"), p);
        }
        for (i, b) in net.buffers().into_iter().enumerate() {
            let t = Tensor::new(&[b.len()], b.to_vec()).expect("buffer is nonempty");
            self.push(format!("{prefix}.buffer{i}"), &t);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = ARCHIVE_MAGIC.to_vec();
        put_u32(&mut out, self.metadata.len() as u32);
        out.extend_from_slice(self.metadata.as_bytes());
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_shape(&mut out, t.shape())?;
            put_values(&mut out, t.data(), false);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != ARCHIVE_MAGIC {
            return Err(Error::Format("bad archive magic".into()));
        }
        let utf8 = |b: &[u8]| String::from_utf8(b.to_vec()).map_err(|_| Error::Format("archive string is not UTF-8".into()));
        let meta_len = r.u32()? as usize;
        let metadata = utf8(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = utf8(r.take(name_len)?)?;
            let shape = r.shape()?;
            tensors.push((name, r.tensor(&shape, false)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after archive", r.remaining())));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
